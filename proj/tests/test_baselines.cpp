#include <doctest.h>

#include <cmath>

#include "semintk/baselines.hpp"
#include "semintk/rng.hpp"
#include "semintk/simgen.hpp"

using namespace semintk;

namespace {

const LossSpec kSquared{LossFamily::Squared};

Dataset constant_signal(int n, int d, std::uint64_t seed, double level,
                        double sigma = 0.2) {
  auto [z, x] = gen_covariates(n, d, seed);
  Rng rng = Rng::from_stream(seed, 5);
  Dataset data;
  data.kind = TaskKind::Regression;
  data.z = std::move(z);
  data.x = std::move(x);
  data.y.resize(n);
  const Eigen::Vector2d beta0{1.0, 0.75};
  for (int i = 0; i < n; ++i)
    data.y(i) = level + data.z.row(i) * beta0 + sigma * rng.normal();
  data.truth = DatasetTruth{beta0, 0, seed};
  return data;
}

}  // namespace

TEST_SUITE_BEGIN("baselines");

TEST_CASE("kernel ridge baseline matches the closed-form ridge solution") {
  const CaseSpec spec{1};
  const Dataset data = gen_regression(spec, 60, 7);
  const double h = 1.5, lambda = 0.05;
  const KernelFn kernel = laplacian_kernel(h);
  const GramMatrix g = gram(kernel, data.x);
  const Eigen::VectorXd resid = data.y - data.z * data.truth->beta0;
  Eigen::MatrixXd lhs = g.entries;
  lhs.diagonal().array() += static_cast<double>(data.n()) * lambda;
  const Eigen::VectorXd oracle = lhs.ldlt().solve(resid);

  TrainConfig cfg;
  auto [lo, hi] = g.eigen_range();
  cfg.step = 0.9 * 2.0 / (2.0 * hi / data.n() + 2.0 * lambda);
  cfg.steps = static_cast<int>(16.0 / (2.0 * lambda * cfg.step)) + 1;
  cfg.lambda = lambda;
  const Eigen::VectorXd beta0 = data.truth->beta0;
  const FitResult fit = fit_rkhs(data, kSquared, kernel, cfg, beta0);
  const Eigen::VectorXd diff = fit.rkhs_state->alpha - oracle;
  CHECK(std::sqrt(diff.dot(g.entries * diff)) /
            std::sqrt(oracle.dot(g.entries * oracle)) <=
        1e-4);
}

TEST_CASE("kernel ridge with huge bandwidth collapses toward a constant") {
  const Dataset data = constant_signal(60, 3, 11, 4.0);
  const KernelFn kernel = laplacian_kernel(1e6);
  const GramMatrix g = gram(kernel, data.x);
  // kernel ~ 1 everywhere: gram is nearly all-ones
  CHECK((g.entries.array() - 1.0).abs().maxCoeff() <= 1e-5);

  TrainConfig cfg;
  cfg.steps = 3000;
  cfg.step = 1e-2;
  cfg.lambda = 1e-3;
  const FitResult fit = fit_kernel_ridge_baseline(data, kSquared, 1e6, 1e-3, cfg);
  const double spread = fit.fitted_f.maxCoeff() - fit.fitted_f.minCoeff();
  CHECK(spread <= 1e-3 * (1.0 + fit.fitted_f.cwiseAbs().maxCoeff()));
}

TEST_CASE("local linear recovers a constant nonparametric part") {
  const Dataset data = constant_signal(1000, 2, 13, 3.0, 0.2);
  TrainConfig cfg;
  const LocalLinearResult res =
      fit_local_linear_baseline(data, kSquared, 0.5, cfg);
  CHECK(res.fallback_count == 0);
  // fhat approximately the constant, beta near truth
  for (Eigen::Index i = 0; i < 40; ++i)
    CHECK(std::abs(res.fit.fitted_f(i) - 3.0) <= 0.05);
  CHECK((res.fit.beta_hat - data.truth->beta0).norm() <= 0.15);
}

TEST_CASE("local linear falls back on empty windows") {
  const Dataset data = constant_signal(40, 2, 17, 1.0);
  // bandwidth below the minimum pairwise squared distance
  double min_d2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < data.n(); ++i)
    for (int j = i + 1; j < data.n(); ++j)
      min_d2 = std::min(min_d2,
                        (data.x.row(i) - data.x.row(j)).squaredNorm());
  TrainConfig cfg;
  const Eigen::MatrixXd far_grid = Eigen::MatrixXd::Constant(3, 2, 0.5);
  const LocalLinearResult res = fit_local_linear_baseline(
      data, kSquared, 0.5 * min_d2, cfg, far_grid);
  CHECK(res.fallback_count > 0);
}

TEST_CASE("epanechnikov weight is the truncated paper form") {
  Eigen::VectorXd a(2), b(2);
  a << 0.0, 0.0;
  b << 0.3, 0.4;  // squared distance 0.25
  CHECK(epanechnikov_weight(a, b, 1.0) == doctest::Approx(0.75));
  CHECK(epanechnikov_weight(a, b, 0.2) == 0.0);
}

TEST_CASE("spline baseline recovers a cubic in one dimension") {
  Rng rng(19);
  const int n = 1000;
  Dataset data;
  data.kind = TaskKind::Regression;
  data.y.resize(n);
  data.z.resize(n, 2);
  data.x.resize(n, 1);
  const Eigen::Vector2d beta0{1.0, 0.75};
  for (int i = 0; i < n; ++i) {
    data.x(i, 0) = rng.uniform();
    data.z(i, 0) = rng.uniform();
    data.z(i, 1) = rng.uniform();
    const double t = data.x(i, 0);
    data.y(i) = 2.0 * t * t * t - 1.5 * t + 0.5 + data.z.row(i) * beta0;
  }
  data.truth = DatasetTruth{beta0, 0, 19};

  TrainConfig cfg;
  cfg.step = 0.4;
  cfg.steps = 60000;
  const FitResult fit = fit_spline_baseline(data, kSquared, 8, cfg);
  const double mse =
      (fit.fitted_f -
       (data.y - data.z * data.truth->beta0))
          .squaredNorm() /
      n;
  CHECK(mse <= 1e-3);
  CHECK((fit.beta_hat - beta0).norm() <= 0.05);

  SUBCASE("predictor matches fitted values at training points") {
    for (int i = 0; i < 10; ++i)
      CHECK(fit.predictor(data.x.row(i)) == doctest::Approx(fit.fitted_f(i)));
  }
}

TEST_CASE("spline guards") {
  const Dataset small = constant_signal(100, 2, 23, 1.0);
  TrainConfig cfg;
  cfg.steps = 10;
  // 12^2 = 144 >= 100 basis functions
  CHECK_THROWS_AS(fit_spline_baseline(small, kSquared, 12, cfg),
                  std::invalid_argument);
  const Dataset high_d = gen_regression(CaseSpec{2}, 50, 29);  // d = 10
  CHECK_THROWS_AS(fit_spline_baseline(high_d, kSquared, 2, cfg),
                  std::invalid_argument);
}

TEST_CASE("small-nn baseline") {
  const Dataset data = constant_signal(400, 3, 31, 2.0);
  TrainConfig cfg;
  cfg.steps = 50;
  cfg.seed = 5;

  SUBCASE("parameter count at or above n is rejected") {
    // depth 5, width 12 at d=3: > 400 parameters
    CHECK_THROWS_AS(fit_small_nn_baseline(data, kSquared, 12, 5, cfg),
                    std::invalid_argument);
  }
  SUBCASE("same width reproduces fit_nn exactly") {
    const FitResult a = fit_small_nn_baseline(data, kSquared, 6, 2, cfg);
    const FitResult b = fit_nn(data, kSquared, NetArch{2, 6, 3}, cfg);
    CHECK(a.beta_hat == b.beta_hat);
    CHECK(a.fitted_f == b.fitted_f);
  }
}

TEST_SUITE_END();
