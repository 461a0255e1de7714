#include "costq/commands.hpp"
#include "costq/config.hpp"
#include "costq/dataset_io.hpp"
#include "costq/policy_io.hpp"

#include <doctest.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <unistd.h>

namespace fs = std::filesystem;
using namespace costq;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("costq_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t data_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += !line.empty();
  return n - 1;
}

RunConfig small_config() {
  RunConfig c;
  c.n = {400};
  c.seeds = {1};
  c.test_size = 500;
  c.jobs = 1;
  return c;
}

struct QuietLogs {
  QuietLogs() { spdlog::set_level(spdlog::level::off); }
  ~QuietLogs() { spdlog::set_level(spdlog::level::info); }
};

}  // namespace

TEST_CASE("simulate writes every cell and reruns byte for byte") {
  QuietLogs quiet;
  TempDir a("sim_a"), b("sim_b");
  RunConfig c = small_config();
  c.seeds = {1, 2};
  REQUIRE(cmd_simulate(c, a.path) == kExitOk);
  REQUIRE(cmd_simulate(c, b.path) == kExitOk);

  for (std::uint64_t seed : {1, 2}) {
    const std::string cell = "scenario1_n400_seed" + std::to_string(seed) + ".csv";
    for (const char* sub : {"observed", "full", "propensities"}) {
      const fs::path p = a.path / "data" / sub / cell;
      REQUIRE(fs::exists(p));
      CHECK(data_lines(p) == 400);
      CHECK(slurp(p) == slurp(b.path / "data" / sub / cell));
    }
    CHECK(data_lines(a.path / "data" / "test" / ("scenario1_seed" + std::to_string(seed) + ".csv")) == 500);
  }
  std::size_t observed = 0;
  for (const auto& e : fs::directory_iterator(a.path / "data" / "observed")) observed += e.is_regular_file();
  CHECK(observed == 2);
  CHECK(fs::exists(a.path / "resolved_config.toml"));

  const Dataset full = read_dataset_csv(a.path / "data" / "full" / "scenario1_n400_seed1.csv");
  CHECK(full.fully_observed());
}

TEST_CASE("fit writes a loadable policy and rejects corrupt rows with exit 3") {
  QuietLogs quiet;
  TempDir d("fit");
  RunConfig c = small_config();
  REQUIRE(cmd_simulate(c, d.path) == kExitOk);
  const fs::path data = d.path / "data" / "observed" / "scenario1_n400_seed1.csv";

  REQUIRE(cmd_fit(c, data, "costq", d.path / "costq") == kExitOk);
  const nlohmann::json j = nlohmann::json::parse(slurp(d.path / "costq" / "policy.json"));
  CHECK(j.at("kind") == "contrast");
  CHECK(j.at("contrasts").contains("2|1"));
  CHECK(j.at("contrasts").contains("1|0"));
  CHECK(j.at("training").at("n") == 400);
  CHECK(fs::exists(d.path / "costq" / "diagnostics.json"));
  CHECK_NOTHROW(load_policy(d.path / "costq" / "policy.json"));

  REQUIRE(cmd_fit(c, data, "always_stop", d.path / "stop") == kExitOk);
  const auto stop = load_policy(d.path / "stop" / "policy.json");
  CHECK(stop->decide0(Vector::Zero(stop->dims().p0)) == 0);

  CHECK(cmd_fit(c, data, "bogus_method", d.path / "bogus") == kExitConfig);

  std::ifstream in(data);
  std::ofstream bad(d.path / "bad.csv");
  std::string line;
  for (int k = 0; std::getline(in, line); ++k) {
    if (k == 3) {
      line = line.substr(0, line.rfind(',', line.rfind(',') - 1)) + ",3,0";
    }
    bad << line << '\n';
  }
  bad.close();
  CHECK(cmd_fit(c, d.path / "bad.csv", "costq", d.path / "bad") == kExitData);
  try {
    read_dataset_csv(d.path / "bad.csv");
    FAIL("corrupt file was accepted");
  } catch (const SchemaError& e) {
    CHECK(e.row() == 3);
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
  }
}

TEST_CASE("evaluate reports exact fixed-policy costs and reruns identically") {
  QuietLogs quiet;
  TempDir d("eval");
  RunConfig c = small_config();
  REQUIRE(cmd_simulate(c, d.path) == kExitOk);
  const fs::path train = d.path / "data" / "observed" / "scenario1_n400_seed1.csv";
  const fs::path test = d.path / "data" / "test" / "scenario1_seed1.csv";
  REQUIRE(cmd_fit(c, train, "always_test_all", d.path / "all") == kExitOk);

  REQUIRE(cmd_evaluate(d.path / "all" / "policy.json", test, std::nullopt, train, d.path / "r1") == kExitOk);
  REQUIRE(cmd_evaluate(d.path / "all" / "policy.json", test, std::nullopt, train, d.path / "r2") == kExitOk);
  CHECK(slurp(d.path / "r1" / "report.csv") == slurp(d.path / "r2" / "report.csv"));
  CHECK(slurp(d.path / "r1" / "report.json") == slurp(d.path / "r2" / "report.json"));

  const auto report = EvaluationReport::from_json(nlohmann::json::parse(slurp(d.path / "r1" / "report.json")));
  const CostSchedule costs = c.resolved_costs();
  CHECK(report.average_cost == costs.c1() + costs.c2());
  CHECK(report.average_tests == 2.0);
  CHECK(std::accumulate(report.path_proportions.begin(), report.path_proportions.end(), 0.0) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(report.recall90.has_value());

  REQUIRE(cmd_evaluate(d.path / "all" / "policy.json", test, CostSchedule(0.5, 0.25), std::nullopt, d.path / "r3") ==
          kExitOk);
  const auto dear = EvaluationReport::from_json(nlohmann::json::parse(slurp(d.path / "r3" / "report.json")));
  CHECK(dear.average_cost == 0.75);
  CHECK_FALSE(dear.recall90.has_value());

  CHECK(cmd_evaluate(d.path / "all" / "policy.json", train, std::nullopt, std::nullopt, d.path / "r4") == kExitData);
  CHECK(cmd_evaluate(d.path / "missing.json", test, std::nullopt, std::nullopt, d.path / "r5") == kExitData);
}

TEST_CASE("compare writes sorted rows that parse back and do not depend on jobs") {
  QuietLogs quiet;
  TempDir d("compare");
  RunConfig c = small_config();
  c.methods = {"costq", "always_stop"};
  c.n = {400, 600};
  c.seeds = {1, 2, 3};
  c.jobs = 1;
  REQUIRE(cmd_compare(c, d.path / "serial") == kExitOk);
  c.jobs = 4;
  REQUIRE(cmd_compare(c, d.path / "parallel") == kExitOk);

  const std::string serial = slurp(d.path / "serial" / "results.csv");
  CHECK(serial == slurp(d.path / "parallel" / "results.csv"));

  std::istringstream in(serial);
  const auto rows = read_compare_csv(in);
  REQUIRE(rows.size() == 12);
  CHECK(rows.front().n == 400);
  CHECK(rows.front().seed == 1);
  CHECK(rows.front().report.method == "costq");
  CHECK(rows[1].report.method == "always_stop");
  CHECK(rows.back().n == 600);
  CHECK(rows.back().seed == 3);

  const CompareResult direct = run_compare(c);
  std::ostringstream out;
  write_compare_csv(out, direct.rows);
  CHECK(out.str() == serial);
  CHECK(direct.failures.empty());
  CHECK(slurp(d.path / "serial" / "failures.log").empty());
}

TEST_CASE("compare logs failed runs and exits with 4") {
  QuietLogs quiet;
  TempDir d("partial");
  RunConfig c = small_config();
  c.methods = {"always_stop", "only_complete"};
  c.n = {400, 1};
  CHECK(cmd_compare(c, d.path) == kExitPartial);
  std::istringstream in(slurp(d.path / "results.csv"));
  const auto rows = read_compare_csv(in);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].n == 400);
  CHECK(rows[1].n == 400);
  const std::string log = slurp(d.path / "failures.log");
  CHECK(log.find("n=1 seed=1 method=always_stop") != std::string::npos);
  CHECK(log.find("n=1 seed=1 method=only_complete") != std::string::npos);

  c.n = {400};
  c.behavior.alpha = -50.0;
  c.behavior.enforce_bound = false;
  TempDir e("no_s12");
  CHECK(cmd_compare(c, e.path) == kExitPartial);
  CHECK(slurp(e.path / "failures.log").find("no record reached S12") != std::string::npos);
}

TEST_CASE("run configuration parsing") {
  SUBCASE("defaults") {
    const RunConfig c = parse_run_config("");
    CHECK(c.scenario == "scenario1");
    CHECK(c.settings == std::vector<std::string>{"A"});
    CHECK(c.methods.size() == 5);
    CHECK(c.costq.folds == 5);
  }
  SUBCASE("values are read") {
    const RunConfig c = parse_run_config(R"(
n = [400, 800]
seeds = [3]
costs = [0.05, 0.1]
settings = ["A", "C"]
[costq]
folds = 4
[learners.core]
kind = "logistic"
degree = 1
ridge = 0.5
[budget]
target = 0.02
)");
    CHECK(c.n == std::vector<std::size_t>{400, 800});
    CHECK(c.seeds == std::vector<std::uint64_t>{3});
    CHECK(c.resolved_costs().c1() == 0.05);
    CHECK(c.resolved_costs().c2() == 0.1);
    CHECK(c.costq.folds == 4);
    CHECK(c.costq.core.degree == 1);
    CHECK(c.costq.core.ridge == 0.5);
    REQUIRE(c.budget.target.has_value());
    CHECK(*c.budget.target == 0.02);
  }
  SUBCASE("errors carry the source line") {
    try {
      parse_run_config("n = [400]\n\n[costq]\nfolds = 1\n", "run.toml");
      FAIL("invalid folds accepted");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("run.toml:4") != std::string::npos);
    }
    try {
      parse_run_config("seeds = [1]\nbogus = 2\n", "run.toml");
      FAIL("unknown key accepted");
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      CHECK(what.find("run.toml:2") != std::string::npos);
      CHECK(what.find("bogus") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_run_config("n = [400\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("methods = [\"nope\"]\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("settings = [\"Z\"]\n"), ConfigError);
  }
  SUBCASE("resolved echo round trips") {
    RunConfig c = small_config();
    c.settings = {"A", "B"};
    c.costs = CostSchedule(0.2, 0.3);
    c.budget.target = 0.01;
    c.costq.dr_contrast.ridge = 0.7;
    const std::string text = to_toml(c);
    const RunConfig back = parse_run_config(text, "echo");
    CHECK(to_toml(back) == text);
    CHECK(back.costq.hash() == c.costq.hash());
    CHECK(back.resolved_costs().c2() == 0.3);
  }
}

TEST_CASE("exit codes follow the error class") {
  QuietLogs quiet;
  CHECK(run_guarded([] { return kExitOk; }) == kExitOk);
  CHECK(run_guarded([]() -> int { throw ConfigError("x"); }) == kExitConfig);
  CHECK(run_guarded([]() -> int { throw SchemaError("x", 2); }) == kExitData);
  CHECK(run_guarded([]() -> int { throw std::runtime_error("x"); }) == kExitFailure);
}

TEST_CASE("learner and budget errors point at their section") {
  try {
    parse_run_config("seeds = [1]\n[learners.core]\nkind = \"logistic\"\nridge = -1.0\n", "run.toml");
    FAIL("negative ridge accepted");
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    CHECK(what.find("run.toml:2") != std::string::npos);
    CHECK(what.find("learners.core") != std::string::npos);
  }
  try {
    parse_run_config("[budget]\nlambdas = []\n", "run.toml");
    FAIL("empty grid accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.toml:2: budget.lambdas") != std::string::npos);
  }
}
