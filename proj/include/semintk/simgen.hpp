#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <utility>

#include "semintk/dataset.hpp"

namespace semintk {

// Simulation designs: partially linear data with beta0 = (1, 0.75)' and one
// of four nonparametric signals (cases 1 and 3 are 5-dimensional, 2 and 4
// their 10-dimensional extensions).
struct CaseSpec {
  int case_id = 1;  // 1..4

  int d() const { return (case_id == 1 || case_id == 3) ? 5 : 10; }
  Eigen::Vector2d beta0() const { return {1.0, 0.75}; }
  static constexpr double sigma = 0.5;  // regression noise sd
};

using Predictor = std::function<double(const Eigen::VectorXd&)>;

double f0_eval(const CaseSpec& spec, const Eigen::VectorXd& x);

// Mean of f0(X) under the covariate generator, by a cached 1e6-draw Monte
// Carlo with a dedicated fixed seed; used to center the classification index.
double f0_mean(const CaseSpec& spec);

// Z ~ U[0,1]^2; X_j = 0.9 W_j + 0.05 (Z_1 + Z_2) with W ~ U[0,1], so X
// stays inside [0,1]^d.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> gen_covariates(int n, int d,
                                                           std::uint64_t seed);

// Y = f0(X) + Z'beta0 + eps, eps ~ N(0, sigma^2). `sigma` override supports
// the noiseless diagnostic mode.
Dataset gen_regression(const CaseSpec& spec, int n, std::uint64_t seed,
                       double sigma = CaseSpec::sigma);

// Y ~ Bernoulli(logistic(f0(X) + Z'beta0 - E[f0(X)])).
Dataset gen_classification(const CaseSpec& spec, int n, std::uint64_t seed);

// Squared error ||beta_hat - beta0||^2 summed over coordinates.
double mse_beta(const Eigen::VectorXd& beta_hat, const Eigen::VectorXd& beta0);

// Mean of (fhat - f0)^2 over a fresh covariate sample; `centered` subtracts
// the test-sample means of both functions first (the classification intercept
// is absorbed by f and not identified).
double mse_f(const Predictor& fhat, const CaseSpec& spec, int test_n,
             std::uint64_t seed, bool centered = false);

// The covariate sample mse_f evaluates on, exposed so estimators that need
// their evaluation grid up front (local linear) can see the same points.
Eigen::MatrixXd mse_f_test_points(const CaseSpec& spec, int test_n,
                                  std::uint64_t seed);

// Same metric for predictors evaluated in batch.
double mse_f_batch(const std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>& fhat,
                   const CaseSpec& spec, int test_n, std::uint64_t seed,
                   bool centered = false);

}  // namespace semintk
