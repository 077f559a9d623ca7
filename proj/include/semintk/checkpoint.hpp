#pragma once

#include <cstdint>
#include <string>

#include "semintk/mlp.hpp"

namespace semintk {

// Network checkpoint: arch, flat theta, flat theta0, and the init seed.
struct Checkpoint {
  NetArch arch;
  FlatParams theta;
  FlatParams theta0;
  std::uint64_t seed = 0;
};

// Versioned JSON document; doubles round-trip exactly.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace semintk
