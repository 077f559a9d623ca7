// Command-line front end: fit, simulate, ntk-check, flow-gap, coverage.
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "semintk/errors.hpp"
#include "semintk/experiment.hpp"

namespace {

using nlohmann::json;

// exit codes: 0 ok, 2 config error, 3 data error, 4 numerical abort, 1 other
constexpr int kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumerical = 4;

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw semintk::ConfigError("cannot open config file " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw semintk::ConfigError(path + ": invalid JSON: " + e.what());
  }
  return doc;
}

void apply_overrides(json& doc, const std::string& seed, int jobs,
                     const std::string& precision) {
  if (!seed.empty()) doc["master_seed"] = std::stoull(seed);
  if (jobs > 0) doc["jobs"] = jobs;
  if (!precision.empty()) doc["precision"] = precision;
}

int dispatch(const std::string& cmd, const std::string& config_path,
             const std::string& data_path, const std::string& out_dir,
             const std::string& seed, int jobs, const std::string& precision) {
  json doc = load_json(config_path);
  apply_overrides(doc, seed, jobs, precision);

  if (cmd == "fit") {
    if (!seed.empty()) doc["seed"] = std::stoull(seed);
    const json result = semintk::run_fit(doc, data_path, out_dir);
    std::cout << result.dump(2) << std::endl;
    return kOk;
  }
  if (cmd == "simulate" || cmd == "coverage") {
    semintk::ExperimentConfig config = semintk::parse_experiment_config(doc);
    const semintk::ExperimentReport report =
        cmd == "coverage" ? semintk::run_coverage(config, out_dir)
                          : semintk::run_simulation(config, out_dir);
    for (const semintk::MethodCell& cell : report.cells) {
      std::printf("%-16s n=%-6d mse_beta=%.5g mse_f=%.5g failures=%d",
                  cell.method.c_str(), cell.n, cell.mean_mse_beta, cell.mean_mse_f,
                  cell.failures);
      if (!cell.coverage.empty()) {
        std::printf(" coverage=");
        for (size_t j = 0; j < cell.coverage.size(); ++j)
          std::printf("%s%.3f", j ? "/" : "", cell.coverage[j]);
      }
      std::printf("\n");
    }
    std::printf("wall: %.1fs\n", report.wall_seconds);
    return kOk;
  }
  if (cmd == "ntk-check") {
    const json result = semintk::run_ntk_check(doc, out_dir);
    std::cout << result.dump(2) << std::endl;
    return result.at("pass").get<bool>() ? kOk : kNumerical;
  }
  if (cmd == "flow-gap") {
    const json result = semintk::run_flow_gap(doc, out_dir);
    std::cout << result.dump(2) << std::endl;
    return kOk;
  }
  throw semintk::ConfigError("unknown command " + cmd);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semiparametric M-estimation with overparameterized ReLU networks"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_dir, seed, precision;
  int jobs = 0;

  auto add_common = [&](CLI::App* sub, bool needs_data) {
    sub->add_option("--config", config_path, "JSON config file")->required();
    if (needs_data)
      sub->add_option("--data", data_path, "dataset CSV")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "override the master seed");
    sub->add_option("--jobs", jobs, "worker threads for repetitions");
    sub->add_option("--precision", precision, "f64 or f32")
        ->check(CLI::IsMember({"f64", "f32"}));
  };

  add_common(app.add_subcommand("fit", "fit one estimator on a CSV dataset"), true);
  add_common(app.add_subcommand("simulate", "run a repetition study"), false);
  add_common(app.add_subcommand("ntk-check", "kernel diagnostics"), false);
  add_common(app.add_subcommand("flow-gap", "network vs kernel flow gaps"), false);
  add_common(app.add_subcommand("coverage", "confidence-interval coverage study"),
             false);

  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    return dispatch(cmd, config_path, data_path, out_dir, seed, jobs, precision);
  } catch (const semintk::ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kConfig;
  } catch (const semintk::DataError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return kData;
  } catch (const semintk::NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << std::endl;
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kOther;
  }
}
