#include "semintk/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "semintk/errors.hpp"

namespace semintk {

namespace {

constexpr int kVersion = 1;

nlohmann::json to_json(const FlatParams& flat) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < flat.values.size(); ++i) arr.push_back(flat.values(i));
  return arr;
}

FlatParams from_json(const nlohmann::json& arr) {
  FlatParams flat;
  flat.values.resize(static_cast<Eigen::Index>(arr.size()));
  for (Eigen::Index i = 0; i < flat.values.size(); ++i)
    flat.values(i) = arr.at(i).get<double>();
  return flat;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json doc;
  doc["version"] = kVersion;
  doc["format"] = "semintk-checkpoint";
  doc["arch"] = {{"depth", ckpt.arch.depth},
                 {"width", ckpt.arch.width},
                 {"input_dim", ckpt.arch.input_dim}};
  doc["seed"] = ckpt.seed;
  doc["theta"] = to_json(ckpt.theta);
  doc["theta0"] = to_json(ckpt.theta0);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << doc.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": invalid JSON: " + e.what());
  }
  try {
    if (doc.at("version").get<int>() != kVersion)
      throw DataError(path + ": unsupported checkpoint version");
    Checkpoint ckpt;
    ckpt.arch.depth = doc.at("arch").at("depth").get<int>();
    ckpt.arch.width = doc.at("arch").at("width").get<int>();
    ckpt.arch.input_dim = doc.at("arch").at("input_dim").get<int>();
    ckpt.seed = doc.at("seed").get<std::uint64_t>();
    ckpt.theta = from_json(doc.at("theta"));
    ckpt.theta0 = from_json(doc.at("theta0"));
    if (ckpt.theta.values.size() != ckpt.arch.param_count() ||
        ckpt.theta0.values.size() != ckpt.arch.param_count())
      throw DataError(path + ": parameter count does not match arch");
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed checkpoint: " + e.what());
  }
}

}  // namespace semintk
