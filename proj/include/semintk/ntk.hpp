#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>

#include "semintk/mlp.hpp"

namespace semintk {

// Depth index of the limiting tangent kernel; must match the network depth
// it stands in for.
struct KernelSpec {
  int depth = 1;
};

using KernelFn =
    std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

// Arc-cosine kernels of degree 0 and 1. Inputs are clamped into [-1,1];
// values outside a 1e-9 tolerance band are rejected.
double kappa0(double t);
double kappa1(double t);

// Closed-form infinite-width tangent kernel for the ReLU network with
// standard-normal weight/first-bias initialization:
//   K(x,x') = sum_{l=0}^{L} ( s(x,x') k1^{(l)}(u) + [l>=1] )
//             prod_{r=l}^{L-1} k0(k1^{(r)}(u)),
// with s(x,x') = sqrt((|x|^2+1)(|x'|^2+1)) and u = (x.x' + 1)/s(x,x').
double analytic_ntk(const KernelSpec& spec, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& x2);

// Finite-width tangent kernel grad_theta f(x) . grad_theta f(x').
double empirical_ntk(const NetParams& params, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& x2);

KernelFn analytic_kernel(const KernelSpec& spec);
KernelFn empirical_kernel(const NetParams& params);
// Laplacian kernel exp(-|x-x'| / h); used by the kernel-ridge baseline.
KernelFn laplacian_kernel(double bandwidth);

struct GramMatrix {
  Eigen::MatrixXd entries;  // symmetric n x n
  Eigen::MatrixXd anchors;  // the n x d points it was built from

  Eigen::Index size() const { return entries.rows(); }
  // Smallest/largest eigenvalues, for the PSD invariant check.
  std::pair<double, double> eigen_range() const;
  bool is_psd(double rel_tol = 1e-8) const;
  // Diagonal jitter used before inversion downstream: 1e-10 * trace / n.
  double jitter() const;
};

// Kernel matrix over `points` (rows), symmetrized as (G + G^T)/2.
GramMatrix gram(const KernelFn& kernel, const Eigen::MatrixXd& points);

// Row-major CSV with 17 significant digits, for external verification.
void write_gram_csv(const GramMatrix& g, const std::string& path);

}  // namespace semintk
