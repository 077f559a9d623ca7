#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "semintk/dataset.hpp"
#include "semintk/losses.hpp"
#include "semintk/train.hpp"

namespace semintk {

// Componentwise weighted least-squares projection of Z on X over an
// auxiliary network family; hhat(x) estimates the weighted conditional mean.
struct NuisanceProjection {
  std::vector<FitResult> components;  // one fit per Z coordinate
  std::string weights_used;           // "uniform" | "phi(1-phi)" | "general"

  int p() const { return static_cast<int>(components.size()); }
  Eigen::VectorXd eval(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd eval_rows(const Eigen::MatrixXd& rows) const;
};

enum class VarianceMethod { PlugInRegression, PlugInClassification, Sandwich };

struct VarianceEstimate {
  Eigen::MatrixXd sigma_hat;  // p x p asymptotic covariance estimate
  Eigen::MatrixXd a_hat;      // curvature matrix A
  Eigen::MatrixXd b_hat;      // second moment of the efficient score
  VarianceMethod method = VarianceMethod::Sandwich;
  bool clamped = false;  // classification probabilities hit the clamp
};

struct ConfidenceIntervals {
  Eigen::VectorXd lower, upper;
  double level = 0.95;

  bool contains(Eigen::Index j, double value) const {
    return lower(j) <= value && value <= upper(j);
  }
};

// Weights are normalized to mean one, so constant weights reproduce the
// unweighted fit exactly. Each Z column is regressed on X with squared loss.
NuisanceProjection fit_conditional_mean(const Eigen::MatrixXd& x,
                                        const Eigen::MatrixXd& z,
                                        const Eigen::VectorXd& weights,
                                        const NetArch& arch,
                                        const TrainConfig& config,
                                        const std::string& weights_tag = "general");

// sigma_hat = [mean residual^2] [ (1/n) sum (Z_i - h_i)(Z_i - h_i)' ]^{-1}
VarianceEstimate variance_regression(const Eigen::VectorXd& residuals,
                                     const Eigen::MatrixXd& z,
                                     const Eigen::MatrixXd& h_vals);

// sigma_hat = [ (1/n) sum p_i(1-p_i) (Z_i - h_i)(Z_i - h_i)' ]^{-1}; p_hat is
// clamped into [1e-8, 1-1e-8].
VarianceEstimate variance_classification(const Eigen::VectorXd& p_hat,
                                         const Eigen::MatrixXd& z,
                                         const Eigen::MatrixXd& h_vals);

// Per-sample efficient scores l1' Z_i - l2' hhat(X_i) at the fitted values.
Eigen::MatrixXd efficient_score_samples(const Dataset& data, const LossSpec& loss,
                                        const FitResult& fit,
                                        const NuisanceProjection& proj);

// A_hat^{-1} B_hat A_hat^{-T} with A_hat built from the loss curvature at the
// fitted index and B_hat the empirical score second moment.
VarianceEstimate sandwich_variance(const Eigen::MatrixXd& scores,
                                   const Dataset& data, const LossSpec& loss,
                                   const FitResult& fit,
                                   const NuisanceProjection& proj);

// Dispatches to the matching plug-in estimator; the classification display
// assumes the logistic working loss.
VarianceEstimate plug_in_variance(const Dataset& data, const LossSpec& loss,
                                  const FitResult& fit,
                                  const NuisanceProjection& proj);

// beta_j +/- z * sqrt(sigma_jj / n)
ConfidenceIntervals confidence_intervals(const Eigen::VectorXd& beta_hat,
                                         const VarianceEstimate& var, int n,
                                         double level);

// Per-coordinate fraction of repetitions whose interval covers beta0.
Eigen::VectorXd coverage(const std::vector<ConfidenceIntervals>& intervals_per_rep,
                         const Eigen::VectorXd& beta0);

// Upper quantile of the standard normal (hard-coded for common levels).
double normal_quantile(double prob);

// Fits the nuisance projection with task-appropriate weights, then the
// requested variance estimate and intervals.
struct InferenceResult {
  NuisanceProjection projection;
  VarianceEstimate variance;
  ConfidenceIntervals intervals;
};

InferenceResult run_inference(const Dataset& data, const LossSpec& loss,
                              const FitResult& fit, const NetArch& aux_arch,
                              const TrainConfig& aux_config, double level,
                              VarianceMethod method);

}  // namespace semintk
