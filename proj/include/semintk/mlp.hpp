#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace semintk {

// Fully connected ReLU network f(x) = A_L o relu o A_{L-1} o ... o relu o A_0(x)
// with A_i(y) = sqrt(2) * (W_i y + b_i) / sqrt(fanout_i) for i < L and
// A_L(y) = W_L y + b_L. `depth` counts hidden activations, so there are
// depth+1 affine layers; all hidden widths equal `width`.
struct NetArch {
  int depth = 1;      // L >= 1
  int width = 1;      // m >= 1
  int input_dim = 1;  // d >= 1

  bool valid() const { return depth >= 1 && width >= 1 && input_dim >= 1; }

  int layer_in(int i) const { return i == 0 ? input_dim : width; }
  int layer_out(int i) const { return i == depth ? 1 : width; }

  std::int64_t param_count() const;
  bool operator==(const NetArch&) const = default;
};

struct NetParams {
  std::vector<Eigen::MatrixXd> weights;  // W_0..W_L, W_i is layer_out(i) x layer_in(i)
  std::vector<Eigen::VectorXd> biases;   // b_0..b_L, b_i has layer_out(i) entries
  NetArch arch;
};

// All parameters in one vector: layer-major, W_i row-major, then b_i.
struct FlatParams {
  Eigen::VectorXd values;
};

// Weights and b_0 i.i.d. standard normal, b_1..b_L zero. Deterministic in
// (arch, seed); draw order matches the FlatParams layout.
NetParams init_params(const NetArch& arch, std::uint64_t seed);

// Raw network value at x (no difference subtraction).
double forward_base(const NetParams& params, const Eigen::VectorXd& x);

// Difference network f_theta(x) = base(theta, x) - base(theta0, x); zero at init.
double forward(const NetParams& params, const NetParams& params0,
               const Eigen::VectorXd& x);

// forward_base over row-stacked inputs (n x d) -> n values.
Eigen::VectorXd forward_base_batch(const NetParams& params,
                                   const Eigen::MatrixXd& x);

// Exact reverse-mode gradient of forward_base w.r.t. every parameter, in
// FlatParams order. ReLU subgradient at 0 is taken as 0.
FlatParams param_gradient(const NetParams& params, const Eigen::VectorXd& x);

// Penalty J(f_theta) = ||theta - theta0||_2^2.
double penalty(const NetParams& params, const NetParams& params0);

FlatParams flatten(const NetParams& params);
NetParams unflatten(const NetArch& arch, const FlatParams& flat);

}  // namespace semintk
