#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "semintk/checkpoint.hpp"
#include "semintk/errors.hpp"
#include "semintk/experiment.hpp"
#include "semintk/simgen.hpp"

using namespace semintk;
using nlohmann::json;

namespace {

json small_sim_config() {
  return json::parse(R"({
    "version": 1,
    "task": "regression",
    "case": 1,
    "n": [40],
    "reps": 2,
    "master_seed": 77,
    "jobs": 1,
    "test_points": 200,
    "inference": {"enabled": false},
    "methods": [
      {"name": "proposed", "kind": "proposed", "depth": 2, "width": 24,
       "train": {"step": 0.002, "steps": 60}},
      {"name": "underpara", "kind": "small_nn", "depth": 1,
       "width_grid": [2, 3], "train": {"step": 0.002, "steps": 60}}
    ]
  })");
}

std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("semintk_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE_BEGIN("experiment");

TEST_CASE("config parsing rejects malformed documents") {
  json doc = small_sim_config();
  SUBCASE("missing task") {
    doc.erase("task");
    CHECK_THROWS_AS(parse_experiment_config(doc), ConfigError);
  }
  SUBCASE("bad case") {
    doc["case"] = 9;
    CHECK_THROWS_AS(parse_experiment_config(doc), ConfigError);
  }
  SUBCASE("tiny n") {
    doc["n"] = {5};
    CHECK_THROWS_AS(parse_experiment_config(doc), ConfigError);
  }
  SUBCASE("no methods") {
    doc["methods"] = json::array();
    CHECK_THROWS_AS(parse_experiment_config(doc), ConfigError);
  }
  SUBCASE("unknown method kind") {
    doc["methods"][0]["kind"] = "mystery";
    CHECK_THROWS_AS(parse_experiment_config(doc), ConfigError);
  }
  SUBCASE("duplicate method names") {
    doc["methods"][1]["name"] = "proposed";
    CHECK_THROWS_AS(parse_experiment_config(doc), ConfigError);
  }
  SUBCASE("task/loss mismatch") {
    doc["methods"][0]["loss"] = "logistic";
    CHECK_THROWS_AS(parse_experiment_config(doc), ConfigError);
  }
}

TEST_CASE("run_simulation: one record per rep, means recompute") {
  const auto dir = temp_dir("sim");
  const ExperimentConfig config = parse_experiment_config(small_sim_config());
  const ExperimentReport report = run_simulation(config, dir.string());

  const MethodCell* cell = report.find("proposed", 40);
  REQUIRE(cell != nullptr);
  CHECK(cell->reps.size() == 2);
  CHECK(cell->failures == 0);
  double mean = 0.0;
  for (const RepRecord& rec : cell->reps) mean += rec.mse_beta;
  CHECK(cell->mean_mse_beta == doctest::Approx(mean / 2.0).epsilon(1e-12));

  CHECK(std::filesystem::exists(dir / "report.json"));
  CHECK(std::filesystem::exists(dir / "mse_tables.csv"));

  SUBCASE("parallel run produces identical records") {
    ExperimentConfig par = config;
    par.jobs = 4;
    const ExperimentReport report2 = run_simulation(par, "");
    const MethodCell* cell2 = report2.find("proposed", 40);
    REQUIRE(cell2 != nullptr);
    CHECK(cell2->mean_mse_beta == cell->mean_mse_beta);
    CHECK(cell2->mean_mse_f == cell->mean_mse_f);
    for (size_t r = 0; r < cell->reps.size(); ++r)
      CHECK(cell2->reps[r].beta_hat == cell->reps[r].beta_hat);
  }
  SUBCASE("reps=1 single record") {
    ExperimentConfig one = config;
    one.reps = 1;
    const ExperimentReport report1 = run_simulation(one, "");
    CHECK(report1.find("proposed", 40)->reps.size() == 1);
  }
}

TEST_CASE("coverage study emits per-coordinate rates") {
  json doc = small_sim_config();
  doc["inference"] = {{"enabled", true},   {"method", "plugin"},
                      {"level", 0.95},     {"aux_depth", 1},
                      {"aux_width", 16},   {"aux_steps", 60}};
  doc["methods"] = json::array({doc["methods"][0]});
  const auto dir = temp_dir("cov");
  const ExperimentReport report =
      run_coverage(parse_experiment_config(doc), dir.string());
  const MethodCell* cell = report.find("proposed", 40);
  REQUIRE(cell != nullptr);
  REQUIRE(cell->coverage.size() == 2);
  for (double rate : cell->coverage) {
    CHECK(rate >= 0.0);
    CHECK(rate <= 1.0);
  }
  CHECK(std::filesystem::exists(dir / "coverage.csv"));
}

TEST_CASE("run_fit on a csv dataset") {
  const auto dir = temp_dir("fit");
  const Dataset data = gen_regression(CaseSpec{1}, 50, 3);
  const auto csv = dir / "data.csv";
  write_dataset_csv(data, csv.string());

  const json config = json::parse(R"({
    "version": 1,
    "task": "regression",
    "seed": 5,
    "method": {"name": "proposed", "kind": "proposed", "depth": 2, "width": 24,
               "train": {"step": 0.002, "steps": 50}},
    "inference": {"enabled": true, "aux_depth": 1, "aux_width": 8, "aux_steps": 40}
  })");
  const json result = run_fit(config, csv.string(), dir.string());
  CHECK(result.at("beta_hat").size() == 2);
  CHECK(result.at("sigma_hat").size() == 2);
  CHECK(result.at("sigma_hat").at(0).size() == 2);
  CHECK(result.contains("ci"));
  CHECK(std::filesystem::exists(dir / "fit.json"));

  SUBCASE("rerun is byte-identical") {
    const json again = run_fit(config, csv.string(), "");
    CHECK(again.dump() == result.dump());
  }
  SUBCASE("malformed csv row errors name the row") {
    std::ofstream out(csv);
    out << "y,z1,z2,x1,x2,x3,x4,x5\n1,0.1,0.2,0.3,0.4,0.5,0.6,bad\n";
    out.close();
    try {
      run_fit(config, csv.string(), "");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    }
  }
}

TEST_CASE("ntk-check runner") {
  json config = {{"version", 1},  {"widths", {16, 64}}, {"pairs", 5},
                 {"seeds", 2},    {"depth", 2},         {"d", 3},
                 {"identity_depths", 3}, {"identity_points", 10},
                 {"master_seed", 5}};
  const json report = run_ntk_check(config, "");
  CHECK(report.at("kappa_pass").get<bool>());
  CHECK(report.at("identity_pass").get<bool>());
  CHECK(report.at("width_errors").size() == 2);

  SUBCASE("malformed width list is rejected") {
    config["widths"] = json::array();
    CHECK_THROWS_AS(run_ntk_check(config, ""), ConfigError);
    config["widths"] = {64, 16};
    CHECK_THROWS_AS(run_ntk_check(config, ""), ConfigError);
  }
}

TEST_CASE("flow-gap runner") {
  json config = {{"version", 1}, {"n", 14},    {"d", 2},      {"widths", {16}},
                 {"seeds", 1},   {"steps", 20}, {"step", 1e-3}, {"depth", 1},
                 {"probe_points", 10}, {"master_seed", 3}, {"checkpoint_every", 10}};
  const json report = run_flow_gap(config, "");
  CHECK(report.at("per_width").size() == 1);
  CHECK(report.at("per_width").at(0).at("median_f_gap").get<double>() >= 0.0);

  SUBCASE("checkpoint mismatch is rejected") {
    config["checkpoints"] = {0, 10, 20};
    config["rkhs_checkpoints"] = {0, 20};
    CHECK_THROWS_AS(run_flow_gap(config, ""), ConfigError);
  }
}

TEST_CASE("checkpoint round-trip") {
  const NetArch arch{2, 6, 3};
  Checkpoint ckpt;
  ckpt.arch = arch;
  ckpt.seed = 42;
  ckpt.theta = flatten(init_params(arch, 42));
  ckpt.theta0 = flatten(init_params(arch, 42));
  const auto dir = temp_dir("ckpt");
  const auto path = (dir / "net.json").string();
  save_checkpoint(ckpt, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.arch == arch);
  CHECK(back.seed == 42);
  CHECK(back.theta.values == ckpt.theta.values);
  CHECK(back.theta0.values == ckpt.theta0.values);

  SUBCASE("corrupt file is a data error") {
    std::ofstream(path) << "{\"version\": 1}";
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
  }
}

TEST_CASE("cli binary: exit codes and determinism") {
  const auto dir = temp_dir("cli");
  const Dataset data = gen_regression(CaseSpec{1}, 40, 9);
  const auto csv = dir / "d.csv";
  write_dataset_csv(data, csv.string());
  const auto cfg_path = dir / "cfg.json";
  std::ofstream(cfg_path) << R"({
    "version": 1, "task": "regression", "seed": 2,
    "method": {"kind": "proposed", "depth": 1, "width": 16,
               "train": {"step": 0.002, "steps": 30}},
    "inference": {"enabled": false}
  })";

  auto run = [&](const std::string& args) {
    const std::string cmd = std::string(SEMINTK_CLI_PATH) + " " + args +
                            " > " + (dir / "out.txt").string() + " 2>&1";
    return std::system(cmd.c_str()) / 256;
  };

  CHECK(run("fit --config " + cfg_path.string() + " --data " + csv.string() +
            " --out " + (dir / "o1").string()) == 0);
  CHECK(run("fit --config " + cfg_path.string() + " --data " + csv.string() +
            " --out " + (dir / "o2").string()) == 0);
  std::ifstream a(dir / "o1" / "fit.json"), b(dir / "o2" / "fit.json");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(!sa.str().empty());

  SUBCASE("config error exit code") {
    std::ofstream(cfg_path) << "{\"version\": 1}";
    CHECK(run("fit --config " + cfg_path.string() + " --data " + csv.string()) == 2);
  }
  SUBCASE("data error exit code") {
    std::ofstream(csv) << "not,a,valid,header\n";
    CHECK(run("fit --config " + cfg_path.string() + " --data " + csv.string()) == 3);
  }
  SUBCASE("missing config file") {
    CHECK(run("fit --config /nonexistent.json --data " + csv.string()) == 2);
  }
}

TEST_SUITE_END();
