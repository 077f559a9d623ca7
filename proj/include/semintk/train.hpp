#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "semintk/dataset.hpp"
#include "semintk/losses.hpp"
#include "semintk/mlp.hpp"
#include "semintk/ntk.hpp"
#include "semintk/simgen.hpp"

namespace semintk {

enum class Precision { F64, F32 };

struct TrainConfig {
  double lambda = 0.0;  // penalty tuning
  double step = 1e-3;   // explicit-Euler step / learning rate
  int steps = 1000;     // full-batch steps, or epochs in minibatch mode
  std::uint64_t seed = 0;
  std::vector<int> checkpoints;  // sorted step indices in [0, steps]
  int batch = 0;                 // 0 = full batch, else minibatch size
  Precision precision = Precision::F64;
  // run aborts when the objective exceeds this multiple of its start value
  double divergence_factor = 1e3;
  // minibatch mode: evaluate the full objective every k-th epoch (the extra
  // forward pass costs ~1/3 of an epoch)
  int objective_every = 1;

  void validate() const;
};

// Joint state of the penalized network flow (Euler discretization of the
// beta/theta gradient-flow equations).
struct NnFitState {
  Eigen::VectorXd beta;
  NetParams params;
  std::shared_ptr<const NetParams> params0;
  int step_index = 0;
  std::vector<double> objective_history;
};

// Kernel surrogate state: ftilde = sum_i alpha_i K(., X_i), confined to the
// span of the kernel sections at the anchors.
struct RkhsFitState {
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  std::shared_ptr<const GramMatrix> gram;
  int step_index = 0;
  std::vector<double> objective_history;
};

struct FitDiagnostics {
  double final_objective = 0.0;
  double beta_grad_norm = 0.0;
  double f_grad_norm = 0.0;  // theta-gradient norm, or alpha-gradient norm
  double lambda = 0.0;
  double step = 0.0;
  int steps_run = 0;
  bool monotone_guarantee = false;  // step-size condition held at launch
  std::vector<double> objective_history;
};

using BatchPredictor = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

struct FitResult {
  Eigen::VectorXd beta_hat;
  Predictor predictor;          // evaluable fhat on the covariate domain
  BatchPredictor predict_rows;  // same map over row-stacked inputs
  Eigen::VectorXd fitted_f;     // fhat at the training covariates
  FitDiagnostics diagnostics;
  // populated by the matching fitter; empty otherwise
  std::shared_ptr<const NetParams> net_params, net_params0;
  std::shared_ptr<const RkhsFitState> rkhs_state;
};

// Crude curvature bound for the empirical-risk gradient: l''_max times
// (max kernel diagonal + max |Z_i|^2) plus the penalty term. The full-batch
// descent guarantee needs step * bound <= 2.
double gradient_lipschitz_estimate(const Dataset& data, const LossSpec& loss,
                                   double kernel_diag_max, double lambda);
double ntk_diag_max(const Dataset& data, int depth);

// One simultaneous explicit-Euler step of the network flow (full batch).
NnFitState nn_flow_step(const NnFitState& state, const Dataset& data,
                        const LossSpec& loss, const TrainConfig& config);

NnFitState make_nn_state(const Dataset& data, const NetArch& arch,
                         std::uint64_t seed);

// Penalized joint training of (beta, theta) from the standard-normal
// initialization, beta starting at zero.
FitResult fit_nn(const Dataset& data, const LossSpec& loss, const NetArch& arch,
                 const TrainConfig& config,
                 const Eigen::VectorXd* sample_weights = nullptr);

// As fit_nn, capturing the state at each configured checkpoint (64-bit,
// full batch only).
std::vector<NnFitState> fit_nn_trace(const Dataset& data, const LossSpec& loss,
                                     const NetArch& arch,
                                     const TrainConfig& config);

// One explicit-Euler step of the kernel surrogate flow.
RkhsFitState rkhs_flow_step(const RkhsFitState& state, const Dataset& data,
                            const LossSpec& loss, const TrainConfig& config);

RkhsFitState make_rkhs_state(const Dataset& data, const KernelFn& kernel);

// Kernel-penalized M-estimation in the anchor span. `frozen_beta` pins the
// linear coefficients (used by the ridge-oracle checks).
FitResult fit_rkhs(const Dataset& data, const LossSpec& loss,
                   const KernelFn& kernel, const TrainConfig& config,
                   const std::optional<Eigen::VectorXd>& frozen_beta = {});

std::vector<RkhsFitState> fit_rkhs_trace(const Dataset& data, const LossSpec& loss,
                                         const KernelFn& kernel,
                                         const TrainConfig& config);

// Evaluate the kernel expansion sum_i alpha_i K(., anchor_i) at given rows.
Eigen::VectorXd kernel_expansion(const KernelFn& kernel,
                                 const Eigen::MatrixXd& anchors,
                                 const Eigen::VectorXd& alpha,
                                 const Eigen::MatrixXd& points);

// Trajectory discrepancy between time-aligned network and kernel flows:
// max |beta| gap and sup-norm f gap over a probe grid, per checkpoint.
struct GapReport {
  std::vector<int> step_indices;
  std::vector<double> beta_gaps;
  std::vector<double> f_gaps;
  double max_beta_gap = 0.0;
  double max_f_gap = 0.0;
};

GapReport flow_gap(const std::vector<NnFitState>& nn_ckpts,
                   const std::vector<RkhsFitState>& rkhs_ckpts,
                   const KernelFn& kernel, const Eigen::MatrixXd& probe);

// Tuning-parameter rate: c * n^-(d+1)/(2d+1), or c * n^-(d+1)/(2s+d) when a
// smoothness index s > d/2 is supplied.
double lambda_schedule(int n, int d, std::optional<double> smoothness = {},
                       double c = 1.0);

// Deterministic 80/20 split on the first grid entry's seed; picks the grid
// element with the smallest validation risk (no penalty term), ties broken
// by smaller lambda then smaller index.
std::size_t select_hyperparams(const Dataset& data, const LossSpec& loss,
                               const NetArch& arch,
                               const std::vector<TrainConfig>& grid);

// Generic form: caller supplies one fitter per grid element.
std::size_t select_hyperparams_by(
    const Dataset& data, const LossSpec& loss,
    const std::vector<std::function<FitResult(const Dataset&)>>& fitters,
    const std::vector<double>& lambdas, std::uint64_t split_seed);

// Validation split helper (shared with the experiment layer).
std::pair<Dataset, Dataset> split_train_validation(const Dataset& data,
                                                   double train_fraction,
                                                   std::uint64_t seed);

double validation_risk(const FitResult& fit, const Dataset& holdout,
                       const LossSpec& loss);

struct ConvergenceReport {
  bool monotone = true;
  int increase_count = 0;
  double max_relative_increase = 0.0;
  bool stalled = false;  // flat history despite a nonzero gradient
  // least-squares fit of log10(objective - limit) against step, on the last
  // half of the run; populated when a limit is supplied
  std::optional<double> tail_r2;
  std::optional<double> tail_slope;
  bool flagged() const { return !monotone || stalled; }
};

ConvergenceReport convergence_report(const std::vector<double>& history,
                                     const TrainConfig& config,
                                     std::optional<double> limit = {},
                                     std::optional<double> final_grad_norm = {});

}  // namespace semintk
