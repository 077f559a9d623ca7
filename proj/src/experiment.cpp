#include "semintk/experiment.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#include "semintk/checkpoint.hpp"
#include "semintk/errors.hpp"
#include "semintk/rng.hpp"
#include "semintk/simgen.hpp"

namespace semintk {

namespace {

using nlohmann::json;

// ---- config parsing ----

template <typename T>
T require(const json& doc, const std::string& field) {
  if (!doc.contains(field)) throw ConfigError("config: missing field '" + field + "'");
  try {
    return doc.at(field).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: field '" + field + "' has the wrong type");
  }
}

template <typename T>
T optional_field(const json& doc, const std::string& field, T fallback) {
  if (!doc.contains(field)) return fallback;
  try {
    return doc.at(field).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: field '" + field + "' has the wrong type");
  }
}

void check_version(const json& doc) {
  if (optional_field<int>(doc, "version", 1) != 1)
    throw ConfigError("config: unsupported version");
}

LossSpec parse_loss(const json& doc, TaskKind task) {
  const std::string name = optional_field<std::string>(
      doc, "loss", task == TaskKind::Regression ? "squared" : "logistic");
  LossSpec spec;
  if (name == "squared") spec.family = LossFamily::Squared;
  else if (name == "huber") spec.family = LossFamily::Huber;
  else if (name == "logistic") spec.family = LossFamily::LogisticNll;
  else if (name == "probit") spec.family = LossFamily::ProbitNll;
  else throw ConfigError("config: unknown loss '" + name + "'");
  spec.huber_delta = optional_field<double>(doc, "huber_delta", 1.345);
  if (task == TaskKind::Classification && !spec.is_classification())
    throw ConfigError("config: classification task needs a likelihood loss");
  if (task == TaskKind::Regression && spec.is_classification())
    throw ConfigError("config: regression task needs a regression loss");
  return spec;
}

Precision parse_precision(const json& doc) {
  const std::string p = optional_field<std::string>(doc, "precision", "f64");
  if (p == "f64") return Precision::F64;
  if (p == "f32") return Precision::F32;
  throw ConfigError("config: precision must be 'f64' or 'f32'");
}

TrainConfig parse_train(const json& doc, Precision precision) {
  TrainConfig cfg;
  cfg.step = optional_field<double>(doc, "step", 1e-3);
  cfg.steps = optional_field<int>(doc, "steps", 1000);
  cfg.batch = optional_field<int>(doc, "batch", 0);
  cfg.lambda = optional_field<double>(doc, "lambda", 0.0);
  cfg.objective_every = optional_field<int>(doc, "objective_every", 1);
  cfg.precision = precision;
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: train: ") + e.what());
  }
  return cfg;
}

MethodConfig parse_method(const json& doc, TaskKind task, Precision precision) {
  MethodConfig m;
  m.kind = require<std::string>(doc, "kind");
  m.name = optional_field<std::string>(doc, "name", m.kind);
  static const char* kinds[] = {"proposed", "spline", "rkhs_laplacian",
                                "local_linear", "small_nn"};
  if (std::find_if(std::begin(kinds), std::end(kinds), [&](const char* k) {
        return m.kind == k;
      }) == std::end(kinds))
    throw ConfigError("config: unknown method kind '" + m.kind + "'");
  m.loss = parse_loss(doc, task);
  m.depth = optional_field<int>(doc, "depth", 5);
  m.width = optional_field<int>(doc, "width", 1000);
  m.train = parse_train(doc.contains("train") ? doc.at("train") : json::object(),
                        precision);
  m.lambda_grid = optional_field<std::vector<double>>(doc, "lambda_grid", {});
  m.bandwidth_grid = optional_field<std::vector<double>>(doc, "bandwidth_grid", {});
  m.knots_grid = optional_field<std::vector<int>>(doc, "knots_grid", {});
  m.width_grid = optional_field<std::vector<int>>(doc, "width_grid", {});
  return m;
}

// ---- grid handling ----

struct GridEntry {
  double lambda = 0.0;
  double bandwidth = 0.0;
  int knots = 0;
  int width = 0;
};

std::vector<GridEntry> expand_grid(const MethodConfig& m, int n, int d) {
  std::vector<double> lambdas = m.lambda_grid;
  if (lambdas.empty()) lambdas = {lambda_schedule(n, d)};
  std::vector<GridEntry> grid;
  if (m.kind == "proposed") {
    for (double l : lambdas) grid.push_back({l, 0.0, 0, m.width});
  } else if (m.kind == "rkhs_laplacian") {
    std::vector<double> bws = m.bandwidth_grid.empty()
                                  ? std::vector<double>{1.0}
                                  : m.bandwidth_grid;
    for (double l : lambdas)
      for (double h : bws) grid.push_back({l, h, 0, 0});
  } else if (m.kind == "local_linear") {
    std::vector<double> bws = m.bandwidth_grid.empty()
                                  ? std::vector<double>{1.0}
                                  : m.bandwidth_grid;
    for (double h : bws) grid.push_back({0.0, h, 0, 0});
  } else if (m.kind == "spline") {
    std::vector<int> knots = m.knots_grid.empty() ? std::vector<int>{4} : m.knots_grid;
    for (int k : knots) grid.push_back({0.0, 0.0, k, 0});
  } else {  // small_nn
    std::vector<int> widths = m.width_grid.empty() ? std::vector<int>{10} : m.width_grid;
    for (int w : widths) grid.push_back({0.0, 0.0, 0, w});
  }
  return grid;
}

std::function<FitResult(const Dataset&)> make_fitter(
    const MethodConfig& m, const GridEntry& entry, std::uint64_t fit_seed,
    const std::optional<Eigen::MatrixXd>& extra_grid) {
  TrainConfig cfg = m.train;
  cfg.lambda = entry.lambda;
  cfg.seed = fit_seed;
  if (m.kind == "proposed") {
    const int depth = m.depth, width = entry.width;
    return [cfg, depth, width, loss = m.loss](const Dataset& data) {
      NetArch arch{depth, width, static_cast<int>(data.d())};
      return fit_nn(data, loss, arch, cfg);
    };
  }
  if (m.kind == "rkhs_laplacian") {
    return [cfg, entry, loss = m.loss](const Dataset& data) {
      return fit_kernel_ridge_baseline(data, loss, entry.bandwidth, entry.lambda, cfg);
    };
  }
  if (m.kind == "local_linear") {
    return [cfg, entry, loss = m.loss, extra_grid](const Dataset& data) {
      return fit_local_linear_baseline(data, loss, entry.bandwidth, cfg, extra_grid).fit;
    };
  }
  if (m.kind == "spline") {
    return [cfg, entry, loss = m.loss](const Dataset& data) {
      return fit_spline_baseline(data, loss, entry.knots, cfg);
    };
  }
  const int depth = m.depth;
  return [cfg, entry, depth, loss = m.loss](const Dataset& data) {
    return fit_small_nn_baseline(data, loss, entry.width, depth, cfg);
  };
}

Dataset generate(const ExperimentConfig& config, int n, std::uint64_t seed) {
  const CaseSpec spec{config.case_id};
  return config.task == TaskKind::Regression
             ? gen_regression(spec, n, seed)
             : gen_classification(spec, n, seed);
}

// partially linear data on an arbitrary input dimension, for the flow-gap runs
Dataset flow_gap_dataset(int n, int d, std::uint64_t seed) {
  auto [z, x] = gen_covariates(n, d, derive_stream(seed, 1));
  Rng noise = Rng::from_stream(seed, 2);
  Dataset data;
  data.kind = TaskKind::Regression;
  data.z = std::move(z);
  data.x = std::move(x);
  data.y.resize(n);
  const Eigen::Vector2d beta0{1.0, 0.75};
  constexpr double pi = 3.14159265358979323846;
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int l = 1; l <= d; ++l) s += l * data.x(i, l - 1);
    data.y(i) = 5.0 * std::sin(6.0 * pi / (d * (d + 1.0)) * s) +
                data.z.row(i) * beta0 + 0.5 * noise.normal();
  }
  data.truth = DatasetTruth{beta0, 0, seed};
  return data;
}

json config_to_json(const ExperimentConfig& config) {
  json doc;
  doc["task"] = config.task == TaskKind::Regression ? "regression" : "classification";
  doc["case"] = config.case_id;
  doc["n"] = config.n_list;
  doc["reps"] = config.reps;
  doc["master_seed"] = config.master_seed;
  doc["jobs"] = config.jobs;
  doc["precision"] = config.precision == Precision::F64 ? "f64" : "f32";
  doc["test_points"] = config.test_points;
  doc["select_per_rep"] = config.select_per_rep;
  doc["inference"] = {{"enabled", config.inference.enabled},
                      {"method", config.inference.method == VarianceMethod::Sandwich
                                     ? "sandwich"
                                     : "plugin"},
                      {"level", config.inference.level},
                      {"aux_depth", config.inference.aux_depth},
                      {"aux_width", config.inference.aux_width},
                      {"aux_steps", config.inference.aux_steps}};
  json methods = json::array();
  for (const MethodConfig& m : config.methods) {
    json md;
    md["name"] = m.name;
    md["kind"] = m.kind;
    md["depth"] = m.depth;
    md["width"] = m.width;
    md["train"] = {{"step", m.train.step},
                   {"steps", m.train.steps},
                   {"batch", m.train.batch}};
    if (!m.lambda_grid.empty()) md["lambda_grid"] = m.lambda_grid;
    if (!m.bandwidth_grid.empty()) md["bandwidth_grid"] = m.bandwidth_grid;
    if (!m.knots_grid.empty()) md["knots_grid"] = m.knots_grid;
    if (!m.width_grid.empty()) md["width_grid"] = m.width_grid;
    methods.push_back(std::move(md));
  }
  doc["methods"] = std::move(methods);
  return doc;
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& doc) {
  check_version(doc);
  ExperimentConfig config;
  const std::string task = require<std::string>(doc, "task");
  if (task == "regression") config.task = TaskKind::Regression;
  else if (task == "classification") config.task = TaskKind::Classification;
  else throw ConfigError("config: task must be regression or classification");
  config.case_id = require<int>(doc, "case");
  if (config.case_id < 1 || config.case_id > 4)
    throw ConfigError("config: case must be in 1..4");
  config.n_list = require<std::vector<int>>(doc, "n");
  for (int n : config.n_list)
    if (n < 10) throw ConfigError("config: every n must be >= 10");
  if (config.n_list.empty()) throw ConfigError("config: n list is empty");
  config.reps = require<int>(doc, "reps");
  if (config.reps < 1) throw ConfigError("config: reps must be >= 1");
  config.master_seed = optional_field<std::uint64_t>(doc, "master_seed", 1);
  config.jobs = optional_field<int>(doc, "jobs", 1);
  if (config.jobs < 1) throw ConfigError("config: jobs must be >= 1");
  config.precision = parse_precision(doc);
  config.test_points = optional_field<int>(doc, "test_points", 10000);
  config.select_per_rep = optional_field<bool>(doc, "select_per_rep", true);

  if (doc.contains("inference")) {
    const json& inf = doc.at("inference");
    config.inference.enabled = optional_field<bool>(inf, "enabled", true);
    const std::string method = optional_field<std::string>(inf, "method", "plugin");
    if (method == "plugin") {
      config.inference.method = config.task == TaskKind::Regression
                                    ? VarianceMethod::PlugInRegression
                                    : VarianceMethod::PlugInClassification;
    } else if (method == "sandwich") {
      config.inference.method = VarianceMethod::Sandwich;
    } else {
      throw ConfigError("config: inference method must be plugin or sandwich");
    }
    config.inference.level = optional_field<double>(inf, "level", 0.95);
    if (!(config.inference.level > 0 && config.inference.level < 1))
      throw ConfigError("config: inference level must be in (0,1)");
    config.inference.aux_depth = optional_field<int>(inf, "aux_depth", 3);
    config.inference.aux_width = optional_field<int>(inf, "aux_width", 256);
    config.inference.aux_steps = optional_field<int>(inf, "aux_steps", 500);
  }

  if (!doc.contains("methods") || !doc.at("methods").is_array() ||
      doc.at("methods").empty())
    throw ConfigError("config: methods must be a nonempty array");
  for (const json& mdoc : doc.at("methods"))
    config.methods.push_back(parse_method(mdoc, config.task, config.precision));
  for (size_t i = 0; i < config.methods.size(); ++i)
    for (size_t j = i + 1; j < config.methods.size(); ++j)
      if (config.methods[i].name == config.methods[j].name)
        throw ConfigError("config: duplicate method name '" + config.methods[i].name +
                          "'");
  return config;
}

const MethodCell* ExperimentReport::find(const std::string& method, int n) const {
  for (const MethodCell& cell : cells)
    if (cell.method == method && cell.n == n) return &cell;
  return nullptr;
}

ExperimentReport run_simulation(const ExperimentConfig& config,
                                const std::string& out_dir) {
  const auto t_start = std::chrono::steady_clock::now();
  const CaseSpec spec{config.case_id};
  const int d = spec.d();
  if (config.task == TaskKind::Classification) f0_mean(spec);  // warm the cache

  // hyperparameter indices fixed per (method, n) when not selecting per rep
  std::vector<std::vector<std::size_t>> preselected(
      config.n_list.size(), std::vector<std::size_t>(config.methods.size(), 0));
  if (!config.select_per_rep) {
    for (size_t ni = 0; ni < config.n_list.size(); ++ni) {
      const int n = config.n_list[ni];
      const std::uint64_t sel_seed =
          derive_stream(derive_stream(config.master_seed, 0xCAFE), n);
      const Dataset sel_data = generate(config, n, sel_seed);
      for (size_t mi = 0; mi < config.methods.size(); ++mi) {
        const MethodConfig& m = config.methods[mi];
        const auto grid = expand_grid(m, n, d);
        if (grid.size() < 2) continue;
        std::vector<std::function<FitResult(const Dataset&)>> fitters;
        std::vector<double> lambdas;
        for (const GridEntry& entry : grid) {
          fitters.push_back(make_fitter(m, entry, derive_stream(sel_seed, 0xF1), {}));
          lambdas.push_back(entry.lambda);
        }
        preselected[ni][mi] =
            select_hyperparams_by(sel_data, m.loss, fitters, lambdas, sel_seed);
      }
    }
  }

  struct Task {
    size_t ni;
    int rep;
  };
  std::vector<Task> tasks;
  for (size_t ni = 0; ni < config.n_list.size(); ++ni)
    for (int rep = 0; rep < config.reps; ++rep) tasks.push_back({ni, rep});

  // one record per (task, method), resolved independently of scheduling
  std::vector<std::vector<RepRecord>> records(
      tasks.size(), std::vector<RepRecord>(config.methods.size()));

  auto run_task = [&](const Task& task) {
    const int n = config.n_list[task.ni];
    const std::uint64_t rep_seed = derive_stream(
        derive_stream(derive_stream(config.master_seed, config.case_id), n),
        task.rep);
    const Dataset data = generate(config, n, rep_seed);
    const std::uint64_t test_seed = derive_stream(rep_seed, 0xE57);
    const bool centered = config.task == TaskKind::Classification;

    for (size_t mi = 0; mi < config.methods.size(); ++mi) {
      const MethodConfig& m = config.methods[mi];
      RepRecord& rec = records[&task - tasks.data()][mi];
      rec.rep = task.rep;
      rec.seed = rep_seed;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const auto grid = expand_grid(m, n, d);
        std::optional<Eigen::MatrixXd> extra_grid;
        if (m.kind == "local_linear")
          extra_grid = mse_f_test_points(spec, config.test_points, test_seed);

        std::size_t idx = 0;
        if (grid.size() > 1) {
          if (config.select_per_rep) {
            std::vector<std::function<FitResult(const Dataset&)>> fitters;
            std::vector<double> lambdas;
            for (const GridEntry& entry : grid) {
              fitters.push_back(
                  make_fitter(m, entry, derive_stream(rep_seed, 0xF1 + mi), {}));
              lambdas.push_back(entry.lambda);
            }
            idx = select_hyperparams_by(data, m.loss, fitters, lambdas, rep_seed);
          } else {
            idx = preselected[task.ni][mi];
          }
        }
        rec.selected_lambda = grid[idx].lambda;

        const auto fitter =
            make_fitter(m, grid[idx], derive_stream(rep_seed, 0xB0 + mi), extra_grid);
        const FitResult fit = fitter(data);
        rec.mse_beta = mse_beta(fit.beta_hat, data.truth->beta0);
        rec.mse_f = mse_f_batch(fit.predict_rows, spec, config.test_points,
                                test_seed, centered);
        for (Eigen::Index j = 0; j < fit.beta_hat.size(); ++j)
          rec.beta_hat.push_back(fit.beta_hat(j));

        if (config.inference.enabled && m.kind == "proposed") {
          NetArch aux{config.inference.aux_depth, config.inference.aux_width, d};
          TrainConfig aux_cfg = m.train;
          aux_cfg.lambda = 0.0;
          aux_cfg.batch = 0;
          aux_cfg.steps = config.inference.aux_steps;
          aux_cfg.seed = derive_stream(rep_seed, 0xAA);
          const InferenceResult inf =
              run_inference(data, m.loss, fit, aux, aux_cfg,
                            config.inference.level, config.inference.method);
          rec.has_ci = true;
          for (Eigen::Index j = 0; j < inf.intervals.lower.size(); ++j) {
            rec.ci_lower.push_back(inf.intervals.lower(j));
            rec.ci_upper.push_back(inf.intervals.upper(j));
          }
        }
      } catch (const std::exception& e) {
        rec.failed = true;
        rec.error = e.what();
      }
      rec.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
    }
  };

  const int jobs = std::min<int>(config.jobs, static_cast<int>(tasks.size()));
  if (jobs <= 1) {
    for (const Task& task : tasks) run_task(task);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < tasks.size(); i = next.fetch_add(1))
          run_task(tasks[i]);
      });
    for (std::thread& t : pool) t.join();
  }

  ExperimentReport report;
  const Eigen::Vector2d beta0 = spec.beta0();
  for (size_t ni = 0; ni < config.n_list.size(); ++ni) {
    for (size_t mi = 0; mi < config.methods.size(); ++mi) {
      MethodCell cell;
      cell.method = config.methods[mi].name;
      cell.n = config.n_list[ni];
      std::vector<ConfidenceIntervals> cis;
      for (size_t ti = 0; ti < tasks.size(); ++ti) {
        if (tasks[ti].ni != ni) continue;
        const RepRecord& rec = records[ti][mi];
        cell.reps.push_back(rec);
        if (rec.failed) {
          ++cell.failures;
          continue;
        }
        cell.mean_mse_beta += rec.mse_beta;
        cell.mean_mse_f += rec.mse_f;
        if (rec.has_ci) {
          ConfidenceIntervals ci;
          ci.lower = Eigen::Map<const Eigen::VectorXd>(rec.ci_lower.data(),
                                                       rec.ci_lower.size());
          ci.upper = Eigen::Map<const Eigen::VectorXd>(rec.ci_upper.data(),
                                                       rec.ci_upper.size());
          cis.push_back(std::move(ci));
        }
      }
      const int ok = static_cast<int>(cell.reps.size()) - cell.failures;
      if (ok > 0) {
        cell.mean_mse_beta /= ok;
        cell.mean_mse_f /= ok;
      }
      if (!cis.empty()) {
        const Eigen::VectorXd rates = coverage(cis, beta0);
        for (Eigen::Index j = 0; j < rates.size(); ++j)
          cell.coverage.push_back(rates(j));
      }
      report.cells.push_back(std::move(cell));
    }
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  report.config_echo = config_to_json(config);

  if (!out_dir.empty()) write_report_files(report, config, out_dir);
  return report;
}

ExperimentReport run_coverage(ExperimentConfig config, const std::string& out_dir) {
  config.inference.enabled = true;
  return run_simulation(config, out_dir);
}

void write_report_files(const ExperimentReport& report, const ExperimentConfig& config,
                        const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  json doc;
  doc["wall_seconds"] = report.wall_seconds;
  doc["config"] = report.config_echo;
  json cells = json::array();
  for (const MethodCell& cell : report.cells) {
    json c;
    c["method"] = cell.method;
    c["n"] = cell.n;
    c["failures"] = cell.failures;
    c["mean_mse_beta"] = cell.mean_mse_beta;
    c["mean_mse_f"] = cell.mean_mse_f;
    if (!cell.coverage.empty()) c["coverage"] = cell.coverage;
    json reps = json::array();
    for (const RepRecord& rec : cell.reps) {
      json r;
      r["rep"] = rec.rep;
      r["seed"] = rec.seed;
      r["failed"] = rec.failed;
      if (rec.failed) {
        r["error"] = rec.error;
      } else {
        r["mse_beta"] = rec.mse_beta;
        r["mse_f"] = rec.mse_f;
        r["beta_hat"] = rec.beta_hat;
        r["lambda"] = rec.selected_lambda;
        if (rec.has_ci) {
          r["ci_lower"] = rec.ci_lower;
          r["ci_upper"] = rec.ci_upper;
        }
      }
      r["seconds"] = rec.seconds;
      reps.push_back(std::move(r));
    }
    c["reps"] = std::move(reps);
    cells.push_back(std::move(c));
  }
  doc["cells"] = std::move(cells);
  std::ofstream(fs::path(out_dir) / "report.json") << doc.dump(2) << '\n';

  // paper-layout tables; entries are scaled by 10 ("x 1e-1" convention)
  std::ofstream table(fs::path(out_dir) / "mse_tables.csv");
  table << "block,case,n";
  for (const MethodConfig& m : config.methods) table << ',' << m.name;
  table << '\n';
  table.precision(4);
  table << std::fixed;
  for (const char* block : {"mse_beta", "mse_f"}) {
    for (int n : config.n_list) {
      table << block << ',' << config.case_id << ',' << n;
      for (const MethodConfig& m : config.methods) {
        const MethodCell* cell = report.find(m.name, n);
        const double v = std::string(block) == "mse_beta" ? cell->mean_mse_beta
                                                          : cell->mean_mse_f;
        if (cell->failures == static_cast<int>(cell->reps.size()))
          table << ",NA";
        else
          table << ',' << 10.0 * v;
      }
      table << '\n';
    }
  }
  table.close();

  bool any_coverage = false;
  for (const MethodCell& cell : report.cells)
    if (!cell.coverage.empty()) any_coverage = true;
  if (any_coverage) {
    std::ofstream cov(fs::path(out_dir) / "coverage.csv");
    cov << "case";
    const Eigen::Index p = CaseSpec{config.case_id}.beta0().size();
    for (Eigen::Index j = 0; j < p; ++j)
      for (int n : config.n_list) cov << ",beta" << (j + 1) << "_n" << n;
    cov << '\n' << config.case_id;
    cov.precision(3);
    cov << std::fixed;
    for (Eigen::Index j = 0; j < p; ++j)
      for (int n : config.n_list) {
        double rate = std::numeric_limits<double>::quiet_NaN();
        for (const MethodCell& cell : report.cells)
          if (cell.n == n && static_cast<Eigen::Index>(cell.coverage.size()) > j)
            rate = cell.coverage[j];
        cov << ',' << rate;
      }
    cov << '\n';
  }
}

nlohmann::json run_fit(const json& config, const std::string& data_csv,
                       const std::string& out_dir) {
  check_version(config);
  const std::string task_name = require<std::string>(config, "task");
  TaskKind task;
  if (task_name == "regression") task = TaskKind::Regression;
  else if (task_name == "classification") task = TaskKind::Classification;
  else throw ConfigError("config: task must be regression or classification");
  const Precision precision = parse_precision(config);
  if (!config.contains("method")) throw ConfigError("config: missing field 'method'");
  const MethodConfig method = parse_method(config.at("method"), task, precision);
  const std::uint64_t seed = optional_field<std::uint64_t>(config, "seed", 1);

  const Dataset data = read_dataset_csv(data_csv, task);
  const int n = static_cast<int>(data.n()), d = static_cast<int>(data.d());

  const auto grid = expand_grid(method, n, d);
  std::size_t idx = 0;
  if (grid.size() > 1) {
    std::vector<std::function<FitResult(const Dataset&)>> fitters;
    std::vector<double> lambdas;
    for (const GridEntry& entry : grid) {
      fitters.push_back(make_fitter(method, entry, derive_stream(seed, 0xF1), {}));
      lambdas.push_back(entry.lambda);
    }
    idx = select_hyperparams_by(data, method.loss, fitters, lambdas, seed);
  }
  const FitResult fit =
      make_fitter(method, grid[idx], derive_stream(seed, 0xB0), {})(data);

  json doc;
  doc["method"] = method.name;
  doc["n"] = n;
  doc["d"] = d;
  doc["lambda"] = grid[idx].lambda;
  doc["beta_hat"] = std::vector<double>(fit.beta_hat.data(),
                                        fit.beta_hat.data() + fit.beta_hat.size());
  doc["diagnostics"] = {{"final_objective", fit.diagnostics.final_objective},
                        {"beta_grad_norm", fit.diagnostics.beta_grad_norm},
                        {"f_grad_norm", fit.diagnostics.f_grad_norm},
                        {"steps", fit.diagnostics.steps_run},
                        {"step", fit.diagnostics.step},
                        {"monotone_guarantee", fit.diagnostics.monotone_guarantee}};

  const bool do_inference =
      !config.contains("inference") ||
      optional_field<bool>(config.at("inference"), "enabled", true);
  if (do_inference && method.kind == "proposed") {
    const json inf_doc =
        config.contains("inference") ? config.at("inference") : json::object();
    const std::string vmethod = optional_field<std::string>(inf_doc, "method", "plugin");
    VarianceMethod vm;
    if (vmethod == "plugin")
      vm = task == TaskKind::Regression ? VarianceMethod::PlugInRegression
                                        : VarianceMethod::PlugInClassification;
    else if (vmethod == "sandwich")
      vm = VarianceMethod::Sandwich;
    else
      throw ConfigError("config: inference method must be plugin or sandwich");
    const double level = optional_field<double>(inf_doc, "level", 0.95);
    NetArch aux{optional_field<int>(inf_doc, "aux_depth", 3),
                optional_field<int>(inf_doc, "aux_width", 256), d};
    TrainConfig aux_cfg = method.train;
    aux_cfg.lambda = 0.0;
    aux_cfg.batch = 0;
    aux_cfg.steps = optional_field<int>(inf_doc, "aux_steps", 500);
    aux_cfg.seed = derive_stream(seed, 0xAA);
    const InferenceResult inf =
        run_inference(data, method.loss, fit, aux, aux_cfg, level, vm);
    json sigma = json::array();
    for (Eigen::Index i = 0; i < inf.variance.sigma_hat.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index j = 0; j < inf.variance.sigma_hat.cols(); ++j)
        row.push_back(inf.variance.sigma_hat(i, j));
      sigma.push_back(std::move(row));
    }
    doc["sigma_hat"] = std::move(sigma);
    doc["ci"] = {{"level", level},
                 {"lower", std::vector<double>(inf.intervals.lower.data(),
                                               inf.intervals.lower.data() +
                                                   inf.intervals.lower.size())},
                 {"upper", std::vector<double>(inf.intervals.upper.data(),
                                               inf.intervals.upper.data() +
                                                   inf.intervals.upper.size())}};
    doc["variance_method"] = vmethod;
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(std::filesystem::path(out_dir) / "fit.json") << doc.dump(2) << '\n';
  }
  return doc;
}

nlohmann::json run_ntk_check(const json& config, const std::string& out_dir) {
  check_version(config);
  const auto widths = optional_field<std::vector<int>>(config, "widths", {64, 256, 1024});
  if (widths.empty() || !std::is_sorted(widths.begin(), widths.end()) ||
      widths.front() < 1)
    throw ConfigError("config: widths must be a nonempty ascending positive list");
  const int pairs = optional_field<int>(config, "pairs", 50);
  const int seeds = optional_field<int>(config, "seeds", 20);
  const int depth = optional_field<int>(config, "depth", 3);
  const int d = optional_field<int>(config, "d", 5);
  const int identity_depths = optional_field<int>(config, "identity_depths", 6);
  const int identity_points = optional_field<int>(config, "identity_points", 100);
  const std::uint64_t master = optional_field<std::uint64_t>(config, "master_seed", 1);
  if (pairs < 1 || seeds < 1 || depth < 1 || d < 1)
    throw ConfigError("config: pairs, seeds, depth, d must be >= 1");

  json doc;
  // arc-cosine endpoint identities
  doc["kappa_pass"] = kappa0(1.0) == 1.0 && kappa0(-1.0) == 0.0 &&
                      kappa1(1.0) == 1.0 && kappa1(-1.0) == 0.0;

  // diagonal closed form K(x,x) = (L+1)(|x|^2+1) + L
  double worst_rel = 0.0;
  Rng rng(derive_stream(master, 11));
  for (int L = 1; L <= identity_depths; ++L) {
    const KernelSpec spec{L};
    for (int k = 0; k < identity_points; ++k) {
      Eigen::VectorXd x(d);
      for (int j = 0; j < d; ++j) x(j) = 2.0 * rng.uniform() - 0.5;
      const double expect = (L + 1) * (x.squaredNorm() + 1.0) + L;
      worst_rel = std::max(worst_rel,
                           std::abs(analytic_ntk(spec, x, x) - expect) / expect);
    }
  }
  doc["identity_max_rel_error"] = worst_rel;
  doc["identity_pass"] = worst_rel <= 1e-12;

  // finite-width convergence sweep at fixed comparison pairs
  Rng prng(derive_stream(master, 12));
  std::vector<Eigen::VectorXd> xs(2 * pairs, Eigen::VectorXd(d));
  for (auto& x : xs)
    for (int j = 0; j < d; ++j) x(j) = prng.uniform();
  const KernelSpec spec{depth};
  std::vector<double> limits(pairs);
  for (int k = 0; k < pairs; ++k)
    limits[k] = analytic_ntk(spec, xs[2 * k], xs[2 * k + 1]);

  std::vector<double> errors;
  for (int m : widths) {
    double err = 0.0;
    for (int s = 0; s < seeds; ++s) {
      const NetParams params = init_params(
          NetArch{depth, m, d}, derive_stream(master, 1000 + 17 * s + m));
      for (int k = 0; k < pairs; ++k)
        err += std::abs(empirical_ntk(params, xs[2 * k], xs[2 * k + 1]) - limits[k]);
    }
    errors.push_back(err / (static_cast<double>(seeds) * pairs));
  }
  doc["widths"] = widths;
  doc["width_errors"] = errors;
  bool monotone = true;
  for (size_t i = 1; i < errors.size(); ++i)
    if (errors[i] > errors[i - 1]) monotone = false;
  doc["width_monotone"] = monotone;
  doc["width_ratio"] = errors.back() / errors.front();
  doc["pass"] = doc["kappa_pass"].get<bool>() && doc["identity_pass"].get<bool>() &&
                monotone;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(std::filesystem::path(out_dir) / "ntk_check.json")
        << doc.dump(2) << '\n';
  }
  return doc;
}

nlohmann::json run_flow_gap(const json& config, const std::string& out_dir) {
  check_version(config);
  const int n = optional_field<int>(config, "n", 50);
  const int d = optional_field<int>(config, "d", 2);
  const auto widths = optional_field<std::vector<int>>(config, "widths", {128, 512, 2048});
  const int seeds = optional_field<int>(config, "seeds", 10);
  const int steps = optional_field<int>(config, "steps", 1000);
  const double eta = optional_field<double>(config, "step", 1e-3);
  const int depth = optional_field<int>(config, "depth", 2);
  const int probe_points = optional_field<int>(config, "probe_points", 200);
  const std::uint64_t master = optional_field<std::uint64_t>(config, "master_seed", 1);
  const double lambda =
      optional_field<double>(config, "lambda", lambda_schedule(n, d));
  const std::string kernel_mode =
      optional_field<std::string>(config, "kernel", "analytic");
  if (kernel_mode != "analytic" && kernel_mode != "empirical")
    throw ConfigError("config: kernel must be 'analytic' or 'empirical'");
  if (widths.empty() || n < 2 || seeds < 1 || steps < 1)
    throw ConfigError("config: invalid flow-gap settings");

  std::vector<int> checkpoints;
  if (config.contains("checkpoints")) {
    checkpoints = require<std::vector<int>>(config, "checkpoints");
    if (config.contains("rkhs_checkpoints") &&
        require<std::vector<int>>(config, "rkhs_checkpoints") != checkpoints)
      throw ConfigError("config: checkpoints and rkhs_checkpoints disagree");
  } else {
    const int every = optional_field<int>(config, "checkpoint_every", 100);
    for (int t = 0; t <= steps; t += every) checkpoints.push_back(t);
    if (checkpoints.back() != steps) checkpoints.push_back(steps);
  }

  const Dataset data = flow_gap_dataset(n, d, derive_stream(master, 21));
  const Eigen::MatrixXd probe =
      gen_covariates(probe_points, d, derive_stream(master, 22)).second;
  const LossSpec loss = parse_loss(config, TaskKind::Regression);

  TrainConfig cfg;
  cfg.lambda = lambda;
  cfg.step = eta;
  cfg.steps = steps;
  cfg.checkpoints = checkpoints;
  cfg.batch = 0;
  cfg.precision = Precision::F64;

  // the kernel surrogate flow is shared across seeds in analytic mode
  std::vector<RkhsFitState> shared_rkhs;
  if (kernel_mode == "analytic")
    shared_rkhs = fit_rkhs_trace(data, loss, analytic_kernel(KernelSpec{depth}), cfg);

  json doc;
  doc["widths"] = widths;
  doc["lambda"] = lambda;
  doc["steps"] = steps;
  doc["kernel"] = kernel_mode;
  json per_width = json::array();
  std::vector<double> median_f, median_beta;
  for (int m : widths) {
    std::vector<double> fgaps, bgaps;
    for (int s = 0; s < seeds; ++s) {
      const std::uint64_t init_seed = derive_stream(master, 4000 + 31 * s + m);
      TrainConfig nn_cfg = cfg;
      nn_cfg.seed = init_seed;
      const NetArch arch{depth, m, d};
      const auto nn_trace = fit_nn_trace(data, loss, arch, nn_cfg);

      KernelFn kernel = analytic_kernel(KernelSpec{depth});
      std::vector<RkhsFitState> rkhs_trace;
      if (kernel_mode == "empirical") {
        kernel = empirical_kernel(init_params(arch, init_seed));
        rkhs_trace = fit_rkhs_trace(data, loss, kernel, cfg);
      }
      const GapReport gap = flow_gap(
          nn_trace, kernel_mode == "empirical" ? rkhs_trace : shared_rkhs, kernel,
          probe);
      fgaps.push_back(gap.max_f_gap);
      bgaps.push_back(gap.max_beta_gap);
    }
    auto median = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      const size_t k = v.size() / 2;
      return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
    };
    json w;
    w["width"] = m;
    w["median_f_gap"] = median(fgaps);
    w["median_beta_gap"] = median(bgaps);
    w["f_gaps"] = fgaps;
    w["beta_gaps"] = bgaps;
    median_f.push_back(w["median_f_gap"].get<double>());
    median_beta.push_back(w["median_beta_gap"].get<double>());
    per_width.push_back(std::move(w));
  }
  doc["per_width"] = std::move(per_width);
  bool monotone = true;
  for (size_t i = 1; i < median_f.size(); ++i)
    if (median_f[i] > median_f[i - 1] || median_beta[i] > median_beta[i - 1])
      monotone = false;
  doc["monotone"] = monotone;
  doc["f_gap_ratio"] = median_f.back() / median_f.front();
  doc["beta_gap_ratio"] = median_beta.back() / median_beta.front();

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(std::filesystem::path(out_dir) / "flow_gap.json")
        << doc.dump(2) << '\n';
  }
  return doc;
}

}  // namespace semintk
