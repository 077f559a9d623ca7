#include "semintk/mlp.hpp"

#include <cmath>
#include <stdexcept>

#include "semintk/rng.hpp"

namespace semintk {

namespace {

void check_arch(const NetArch& arch) {
  if (!arch.valid()) throw std::invalid_argument("NetArch: depth, width, input_dim must be >= 1");
}

void check_same_arch(const NetParams& a, const NetParams& b) {
  if (!(a.arch == b.arch)) throw std::invalid_argument("NetParams arch mismatch");
}

}  // namespace

std::int64_t NetArch::param_count() const {
  std::int64_t total = 0;
  for (int i = 0; i <= depth; ++i)
    total += static_cast<std::int64_t>(layer_out(i)) * layer_in(i) + layer_out(i);
  return total;
}

NetParams init_params(const NetArch& arch, std::uint64_t seed) {
  check_arch(arch);
  Rng rng(seed);
  NetParams p;
  p.arch = arch;
  p.weights.reserve(arch.depth + 1);
  p.biases.reserve(arch.depth + 1);
  for (int i = 0; i <= arch.depth; ++i) {
    const int rows = arch.layer_out(i), cols = arch.layer_in(i);
    Eigen::MatrixXd w(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) w(r, c) = rng.normal();
    Eigen::VectorXd b(rows);
    if (i == 0)
      for (int r = 0; r < rows; ++r) b(r) = rng.normal();
    else
      b.setZero();
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

double forward_base(const NetParams& params, const Eigen::VectorXd& x) {
  const NetArch& arch = params.arch;
  if (x.size() != arch.input_dim)
    throw std::invalid_argument("forward_base: x dimension does not match arch");
  Eigen::VectorXd a = x;
  for (int i = 0; i < arch.depth; ++i) {
    const double scale = std::sqrt(2.0 / arch.layer_out(i));
    a = (scale * (params.weights[i] * a + params.biases[i])).cwiseMax(0.0);
  }
  return (params.weights[arch.depth] * a)(0) + params.biases[arch.depth](0);
}

double forward(const NetParams& params, const NetParams& params0,
               const Eigen::VectorXd& x) {
  check_same_arch(params, params0);
  return forward_base(params, x) - forward_base(params0, x);
}

Eigen::VectorXd forward_base_batch(const NetParams& params,
                                   const Eigen::MatrixXd& x) {
  const NetArch& arch = params.arch;
  if (x.cols() != arch.input_dim)
    throw std::invalid_argument("forward_base_batch: column count does not match arch");
  Eigen::MatrixXd a = x;
  for (int i = 0; i < arch.depth; ++i) {
    const double scale = std::sqrt(2.0 / arch.layer_out(i));
    Eigen::MatrixXd pre = a * params.weights[i].transpose();
    pre.rowwise() += params.biases[i].transpose();
    a = (scale * pre).cwiseMax(0.0);
  }
  Eigen::VectorXd out = a * params.weights[arch.depth].transpose();
  out.array() += params.biases[arch.depth](0);
  return out;
}

FlatParams param_gradient(const NetParams& params, const Eigen::VectorXd& x) {
  const NetArch& arch = params.arch;
  if (x.size() != arch.input_dim)
    throw std::invalid_argument("param_gradient: x dimension does not match arch");
  const int L = arch.depth;

  // forward, keeping activations a_i (input of layer i) and pre-activations
  std::vector<Eigen::VectorXd> acts(L + 1);  // acts[i] feeds layer i
  std::vector<Eigen::VectorXd> pre(L);       // scaled pre-activation of hidden layer i
  acts[0] = x;
  for (int i = 0; i < L; ++i) {
    const double scale = std::sqrt(2.0 / arch.layer_out(i));
    pre[i] = scale * (params.weights[i] * acts[i] + params.biases[i]);
    acts[i + 1] = pre[i].cwiseMax(0.0);
  }

  FlatParams flat;
  flat.values.resize(arch.param_count());

  // layer offsets in the flat layout
  std::vector<std::int64_t> offset(L + 2, 0);
  for (int i = 0; i <= L; ++i)
    offset[i + 1] = offset[i] +
                    static_cast<std::int64_t>(arch.layer_out(i)) * arch.layer_in(i) +
                    arch.layer_out(i);

  // backward; delta holds d out / d (W_i a + b_i) including the layer scale
  Eigen::VectorXd delta = Eigen::VectorXd::Ones(1);
  for (int i = L; i >= 0; --i) {
    const int rows = arch.layer_out(i), cols = arch.layer_in(i);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        wgrad(flat.values.data() + offset[i], rows, cols);
    wgrad = delta * acts[i].transpose();
    flat.values.segment(offset[i] + static_cast<std::int64_t>(rows) * cols, rows) = delta;
    if (i > 0) {
      Eigen::VectorXd up = params.weights[i].transpose() * delta;
      const double scale = std::sqrt(2.0 / arch.layer_out(i - 1));
      delta = scale * (pre[i - 1].array() > 0.0).cast<double>().matrix().asDiagonal() * up;
    }
  }
  return flat;
}

double penalty(const NetParams& params, const NetParams& params0) {
  check_same_arch(params, params0);
  double sum = 0.0;
  for (size_t i = 0; i < params.weights.size(); ++i) {
    sum += (params.weights[i] - params0.weights[i]).squaredNorm();
    sum += (params.biases[i] - params0.biases[i]).squaredNorm();
  }
  return sum;
}

FlatParams flatten(const NetParams& params) {
  FlatParams flat;
  flat.values.resize(params.arch.param_count());
  std::int64_t pos = 0;
  for (size_t i = 0; i < params.weights.size(); ++i) {
    const auto& w = params.weights[i];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.values(pos++) = w(r, c);
    flat.values.segment(pos, params.biases[i].size()) = params.biases[i];
    pos += params.biases[i].size();
  }
  return flat;
}

NetParams unflatten(const NetArch& arch, const FlatParams& flat) {
  check_arch(arch);
  if (flat.values.size() != arch.param_count())
    throw std::invalid_argument("unflatten: flat length does not match arch");
  NetParams p;
  p.arch = arch;
  std::int64_t pos = 0;
  for (int i = 0; i <= arch.depth; ++i) {
    const int rows = arch.layer_out(i), cols = arch.layer_in(i);
    Eigen::MatrixXd w(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) w(r, c) = flat.values(pos++);
    p.weights.push_back(std::move(w));
    p.biases.push_back(flat.values.segment(pos, rows));
    pos += rows;
  }
  return p;
}

}  // namespace semintk
