#pragma once

#include <Eigen/Dense>
#include <optional>

#include "semintk/dataset.hpp"
#include "semintk/losses.hpp"
#include "semintk/train.hpp"

namespace semintk {

// Comparison estimators fitted under the same M-estimation objective.
struct BaselineSpec {
  enum class Kind { Spline, RkhsLaplacian, LocalLinear, SmallNn };
  Kind kind = Kind::RkhsLaplacian;
  int knots_per_dim = 5;   // B-spline basis functions per dimension
  double bandwidth = 1.0;  // Laplacian / Epanechnikov bandwidth
  int width = 10;          // small-network hidden width
  int depth = 5;           // small-network depth
};

// Joint gradient descent on (beta, alpha) of the empirical risk plus
// lambda * alpha' G alpha with the Laplacian kernel Gram G.
FitResult fit_kernel_ridge_baseline(const Dataset& data, const LossSpec& loss,
                                    double bandwidth, double lambda,
                                    const TrainConfig& config);

// Backfitting M-estimation: beta gradient steps at fixed fhat, alternated
// with a local-linear refresh of fhat from the working response, Epanechnikov
// weights with squared-distance bandwidth h. Evaluation points with an empty
// kernel window fall back to the nearest training point (counted in the
// diagnostics). `extra_grid` rows become additional evaluation points; the
// predictor maps a query to its nearest evaluation point.
struct LocalLinearResult {
  FitResult fit;
  int fallback_count = 0;
  int rounds_run = 0;
};

LocalLinearResult fit_local_linear_baseline(
    const Dataset& data, const LossSpec& loss, double bandwidth,
    const TrainConfig& config,
    const std::optional<Eigen::MatrixXd>& extra_grid = {});

// Tensor-product B-spline regression: knots_per_dim basis functions per
// dimension (uniform clamped knots on [0,1], degree min(3, knots_per_dim-1)),
// coefficients and beta fitted jointly by unpenalized gradient descent.
// Refuses d > 5 and basis sizes reaching the sample size.
FitResult fit_spline_baseline(const Dataset& data, const LossSpec& loss,
                              int knots_per_dim, const TrainConfig& config);

// fit_nn with a width kept under the sample size in parameter count.
FitResult fit_small_nn_baseline(const Dataset& data, const LossSpec& loss,
                                int width, int depth, const TrainConfig& config);

// Epanechnikov window with the squared-distance normalization used by the
// local-linear baseline; the normalizing constant cancels in weighted fits.
double epanechnikov_weight(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                           double bandwidth);

}  // namespace semintk
