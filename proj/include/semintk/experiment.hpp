#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "semintk/baselines.hpp"
#include "semintk/dataset.hpp"
#include "semintk/inference.hpp"
#include "semintk/train.hpp"

namespace semintk {

// One estimator entry in an experiment: the proposed network or a baseline,
// with its hyperparameter grid.
struct MethodConfig {
  std::string name;
  std::string kind;  // proposed | spline | rkhs_laplacian | local_linear | small_nn
  LossSpec loss;
  int depth = 5;
  int width = 1000;
  TrainConfig train;
  std::vector<double> lambda_grid;     // empty -> lambda_schedule(n, d)
  std::vector<double> bandwidth_grid;  // rkhs_laplacian, local_linear
  std::vector<int> knots_grid;         // spline
  std::vector<int> width_grid;         // small_nn
};

struct InferenceConfig {
  bool enabled = false;
  VarianceMethod method = VarianceMethod::PlugInRegression;
  bool method_sandwich = false;
  double level = 0.95;
  int aux_depth = 3;
  int aux_width = 256;
  int aux_steps = 500;
};

struct ExperimentConfig {
  TaskKind task = TaskKind::Regression;
  int case_id = 1;
  std::vector<int> n_list;
  int reps = 1;
  std::uint64_t master_seed = 1;
  int jobs = 1;
  Precision precision = Precision::F64;
  int test_points = 10000;
  bool select_per_rep = true;
  InferenceConfig inference;
  std::vector<MethodConfig> methods;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& doc);

struct RepRecord {
  int rep = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double mse_beta = 0.0;
  double mse_f = 0.0;
  std::vector<double> beta_hat;
  double selected_lambda = 0.0;
  bool has_ci = false;
  std::vector<double> ci_lower, ci_upper;
  double seconds = 0.0;
};

// Aggregates for one (method, n) cell of the report tables.
struct MethodCell {
  std::string method;
  int n = 0;
  std::vector<RepRecord> reps;
  int failures = 0;
  double mean_mse_beta = 0.0;
  double mean_mse_f = 0.0;
  std::vector<double> coverage;  // per coordinate, when CIs were produced
};

struct ExperimentReport {
  nlohmann::json config_echo;
  std::vector<MethodCell> cells;
  double wall_seconds = 0.0;

  const MethodCell* find(const std::string& method, int n) const;
};

// Runs the repetition study: generate data, select hyperparameters on an
// 80/20 split, fit every method, collect MSEs and (for the proposed method)
// confidence intervals. Writes report.json plus the paper-layout CSV tables
// when out_dir is nonempty.
ExperimentReport run_simulation(const ExperimentConfig& config,
                                const std::string& out_dir);

// Single-dataset fit: fits the configured method on a CSV dataset and writes
// beta, intervals and diagnostics as JSON. Returns the JSON document.
nlohmann::json run_fit(const nlohmann::json& config, const std::string& data_csv,
                       const std::string& out_dir);

// Kernel diagnostics: closed-form diagonal identity, arc-cosine endpoints,
// and the finite-width convergence sweep. Returns a pass/fail JSON report.
nlohmann::json run_ntk_check(const nlohmann::json& config,
                             const std::string& out_dir);

// Paired network/kernel flows over a width sweep; reports per-width median
// trajectory gaps and their monotonicity.
nlohmann::json run_flow_gap(const nlohmann::json& config,
                            const std::string& out_dir);

// Coverage study: simulation with inference forced on, coverage table output.
ExperimentReport run_coverage(ExperimentConfig config, const std::string& out_dir);

void write_report_files(const ExperimentReport& report, const ExperimentConfig& config,
                        const std::string& out_dir);

}  // namespace semintk
