#include "semintk/ntk.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace semintk {

namespace {

constexpr double kPi = 3.14159265358979323846;

double clamp_unit(double t) {
  if (t < -1.0 - 1e-9 || t > 1.0 + 1e-9)
    throw std::invalid_argument("arc-cosine kernel argument outside [-1,1]");
  return std::min(1.0, std::max(-1.0, t));
}

}  // namespace

double kappa0(double t) {
  t = clamp_unit(t);
  return (kPi - std::acos(t)) / kPi;
}

double kappa1(double t) {
  t = clamp_unit(t);
  return (std::sqrt(std::max(0.0, 1.0 - t * t)) + t * (kPi - std::acos(t))) / kPi;
}

double analytic_ntk(const KernelSpec& spec, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& x2) {
  if (spec.depth < 1) throw std::invalid_argument("KernelSpec depth must be >= 1");
  const int L = spec.depth;
  const double sx = x.squaredNorm() + 1.0;
  const double sy = x2.squaredNorm() + 1.0;
  const double norm = std::sqrt(sx * sy);
  // |u| <= 1 analytically (Cauchy-Schwarz on (x,1)); clamp the fp drift.
  // Equal inputs are snapped to u = 1 exactly: kappa0 has a sqrt cusp there,
  // so even one ulp below 1 would cost ~1e-9 on the diagonal identity.
  double u = std::min(1.0, std::max(-1.0, (x.dot(x2) + 1.0) / norm));
  if (x.size() == x2.size() && x.cwiseEqual(x2).all()) u = 1.0;

  // k1iter[l] = kappa1 composed l times, applied to u; k1iter[0] = u
  std::vector<double> k1iter(L + 1);
  k1iter[0] = u;
  for (int l = 1; l <= L; ++l) k1iter[l] = kappa1(k1iter[l - 1]);

  // suffix[l] = prod_{r=l}^{L-1} kappa0(k1iter[r]); suffix[L] = 1
  std::vector<double> suffix(L + 1);
  suffix[L] = 1.0;
  for (int l = L - 1; l >= 0; --l) suffix[l] = kappa0(k1iter[l]) * suffix[l + 1];

  double total = 0.0;
  for (int l = 0; l <= L; ++l)
    total += (norm * k1iter[l] + (l >= 1 ? 1.0 : 0.0)) * suffix[l];
  return total;
}

double empirical_ntk(const NetParams& params, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& x2) {
  const FlatParams gx = param_gradient(params, x);
  const FlatParams gy = param_gradient(params, x2);
  return gx.values.dot(gy.values);
}

KernelFn analytic_kernel(const KernelSpec& spec) {
  return [spec](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return analytic_ntk(spec, a, b);
  };
}

KernelFn empirical_kernel(const NetParams& params) {
  return [params](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return empirical_ntk(params, a, b);
  };
}

KernelFn laplacian_kernel(double bandwidth) {
  if (bandwidth <= 0.0) throw std::invalid_argument("laplacian bandwidth must be > 0");
  return [bandwidth](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return std::exp(-(a - b).norm() / bandwidth);
  };
}

std::pair<double, double> GramMatrix::eigen_range() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(entries,
                                                    Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return {ev.minCoeff(), ev.maxCoeff()};
}

bool GramMatrix::is_psd(double rel_tol) const {
  auto [lo, hi] = eigen_range();
  return lo >= -rel_tol * std::max(hi, 0.0);
}

double GramMatrix::jitter() const {
  return 1e-10 * entries.trace() / static_cast<double>(size());
}

GramMatrix gram(const KernelFn& kernel, const Eigen::MatrixXd& points) {
  const Eigen::Index n = points.rows();
  if (n < 1) throw std::invalid_argument("gram: need at least one point");
  GramMatrix g;
  g.anchors = points;
  g.entries.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd xi = points.row(i);
    for (Eigen::Index j = i; j < n; ++j) {
      const double v = kernel(xi, points.row(j));
      if (!std::isfinite(v)) throw std::runtime_error("gram: non-finite kernel value");
      g.entries(i, j) = v;
      g.entries(j, i) = v;
    }
  }
  // evaluated once per unordered pair, so already exactly symmetric; keep the
  // explicit symmetrization for kernels evaluated with asymmetric rounding
  g.entries = 0.5 * (g.entries + g.entries.transpose()).eval();
  return g;
}

void write_gram_csv(const GramMatrix& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out.precision(17);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    for (Eigen::Index j = 0; j < g.size(); ++j) {
      if (j) out << ',';
      out << g.entries(i, j);
    }
    out << '\n';
  }
}

}  // namespace semintk
