#include "costq/commands.hpp"

#include "costq/baselines.hpp"
#include "costq/dataset_io.hpp"
#include "costq/parallel.hpp"
#include "costq/policy_io.hpp"
#include "costq/rng.hpp"
#include "costq/service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <csignal>
#include <fstream>
#include <mutex>
#include <sstream>

namespace costq {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTrainTag = 0x7A1D;
constexpr std::uint64_t kBehaviorTag = 0xBE4A;
constexpr std::uint64_t kTestTag = 0x7E57;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void prepare(const fs::path& out) { fs::create_directories(out); }

std::string join(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += fields[i];
  }
  return line;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string cell_name(const RunConfig& c, std::size_t n, std::uint64_t seed) {
  return c.scenario + "_n" + std::to_string(n) + "_seed" + std::to_string(seed);
}

std::size_t index_of(const std::vector<std::string>& v, const std::string& x) {
  return static_cast<std::size_t>(std::find(v.begin(), v.end(), x) - v.begin());
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) {
    spdlog::error("configuration error: {}", e.what());
    return kExitConfig;
  }
  if (dynamic_cast<const Error*>(&e)) {
    spdlog::error("data error: {}", e.what());
    return kExitData;
  }
  spdlog::error("{}", e.what());
  return kExitFailure;
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return exit_code_for(e);
  }
}

CostqConfig method_config(const RunConfig& config, std::string_view setting, std::uint64_t seed) {
  CostqConfig c = config.costq;
  c.seed = seed;
  c.jobs = 1;
  nuisance_misspec(misspec_from_string(setting)).apply(c);
  return c;
}

SimulatedCell simulate_cell(const RunConfig& config, std::size_t n, std::uint64_t seed) {
  const auto scenario = make_scenario(config.scenario);
  if (config.behavior.enforce_bound) config.behavior.check_positivity(*scenario);
  Dataset full = generate_full(*scenario, n, derive_seed(seed, {kTrainTag, n}));
  ObservedData observed = apply_behavior_policy(full, config.behavior, derive_seed(seed, {kBehaviorTag, n}));
  return {std::move(observed), std::move(full)};
}

Dataset simulate_test_set(const RunConfig& config, std::uint64_t seed) {
  return generate_full(*make_scenario(config.scenario), config.test_size, derive_seed(seed, {kTestTag}));
}

EvaluationReport fit_and_evaluate(std::string_view method, const Dataset& train, const Dataset& test,
                                  const CostSchedule& costs, const CostqConfig& config) {
  MethodFit fit = fit_method(method, train, costs, config);
  std::optional<RecallThresholds> thresholds;
  if (train.outcome() == OutcomeKind::binary) {
    std::vector<double> labels;
    labels.reserve(train.size());
    for (const auto& r : train.records()) labels.push_back(r.y);
    try {
      thresholds = recall_thresholds(training_scores(*fit.policy, train), labels);
    } catch (const NoPositives&) {
      spdlog::warn("{}: no positive training labels, operating points skipped", method);
    }
  }
  EvaluationReport report = evaluate(*fit.policy, test, costs, thresholds);
  report.value_estimate = fit.value_estimate;
  return report;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

CompareResult run_compare(const RunConfig& config) {
  config.validate();
  const CostSchedule costs = config.resolved_costs();
  struct Task {
    std::size_t n;
    std::uint64_t seed;
    std::vector<CompareRow> rows;
    std::vector<std::string> failures;
  };
  std::vector<Task> tasks;
  for (std::size_t n : config.n) {
    for (std::uint64_t seed : config.seeds) tasks.push_back({n, seed, {}, {}});
  }

  parallel_for(tasks.size(), resolve_jobs(config.jobs), [&](std::size_t t) {
    Task& task = tasks[t];
    std::optional<SimulatedCell> cell;
    std::optional<Dataset> test;
    try {
      cell = simulate_cell(config, task.n, task.seed);
      test = simulate_test_set(config, task.seed);
    } catch (const std::exception& e) {
      task.failures.push_back("n=" + std::to_string(task.n) + " seed=" + std::to_string(task.seed) +
                              " simulation: " + e.what());
      return;
    }
    for (const auto& setting : config.settings) {
      const CostqConfig cfg = method_config(config, setting, task.seed);
      for (const auto& method : config.methods) {
        try {
          task.rows.push_back({setting, task.n, task.seed, fit_and_evaluate(method, cell->observed.data, *test, costs, cfg)});
        } catch (const std::exception& e) {
          task.failures.push_back("setting=" + setting + " n=" + std::to_string(task.n) +
                                  " seed=" + std::to_string(task.seed) + " method=" + method + ": " + e.what());
        }
      }
    }
  });

  CompareResult result;
  for (auto& task : tasks) {
    for (auto& r : task.rows) result.rows.push_back(std::move(r));
    for (auto& f : task.failures) result.failures.push_back(std::move(f));
  }
  const auto key = [&](const CompareRow& r) {
    return std::make_tuple(index_of(config.settings, r.setting), r.n, r.seed, index_of(config.methods, r.report.method));
  };
  std::sort(result.rows.begin(), result.rows.end(),
            [&](const CompareRow& a, const CompareRow& b) { return key(a) < key(b); });
  std::sort(result.failures.begin(), result.failures.end());
  return result;
}

std::vector<std::string> compare_columns() {
  std::vector<std::string> cols = {"setting", "n_train", "seed"};
  for (auto& c : EvaluationReport::csv_columns()) cols.push_back(c);
  return cols;
}

void write_compare_csv(std::ostream& out, const std::vector<CompareRow>& rows) {
  out << join(compare_columns()) << '\n';
  for (const auto& r : rows) {
    std::vector<std::string> f = {r.setting, std::to_string(r.n), std::to_string(r.seed)};
    for (auto& v : r.report.csv_fields()) f.push_back(std::move(v));
    out << join(f) << '\n';
  }
}

std::vector<CompareRow> read_compare_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || split(line) != compare_columns()) throw SchemaError("unexpected results header");
  std::vector<CompareRow> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() != compare_columns().size()) throw SchemaError("wrong number of fields", row);
    CompareRow r;
    r.setting = f[0];
    r.n = std::stoull(f[1]);
    r.seed = std::stoull(f[2]);
    r.report = EvaluationReport::from_csv_fields(std::vector<std::string>(f.begin() + 3, f.end()));
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_simulate(const RunConfig& config, const fs::path& out) {
  return run_guarded([&] {
    config.validate();
    for (const char* sub : {"observed", "full", "propensities", "test"}) prepare(out / "data" / sub);
    write_text(out / "resolved_config.toml", to_toml(config));
    for (std::uint64_t seed : config.seeds) {
      for (std::size_t n : config.n) {
        const auto cell = simulate_cell(config, n, seed);
        const std::string name = cell_name(config, n, seed);
        write_dataset_csv(out / "data" / "observed" / (name + ".csv"), cell.observed.data);
        write_dataset_csv(out / "data" / "full" / (name + ".csv"), cell.full);
        write_propensities_csv(out / "data" / "propensities" / (name + ".csv"), cell.observed.truth);
      }
      write_dataset_csv(out / "data" / "test" / (config.scenario + "_seed" + std::to_string(seed) + ".csv"),
                        simulate_test_set(config, seed));
    }
    spdlog::info("simulated {} cells into {}", config.n.size() * config.seeds.size(), out.string());
    return kExitOk;
  });
}

int cmd_fit(const RunConfig& config, const fs::path& dataset, std::string_view method, const fs::path& out) {
  return run_guarded([&] {
    config.validate();
    const Dataset data = read_dataset_csv(dataset);
    CostqConfig cfg = method_config(config, config.settings.front(), config.seeds.front());
    cfg.jobs = resolve_jobs(config.jobs);
    const MethodFit fit = fit_method(method, data, config.resolved_costs(), cfg);
    prepare(out);
    write_text(out / "resolved_config.toml", to_toml(config));
    save_policy(out / "policy.json", *fit.policy);
    write_json(out / "diagnostics.json", fit.diagnostics);
    spdlog::info("{} policy written to {}", method, (out / "policy.json").string());
    return kExitOk;
  });
}

int cmd_evaluate(const fs::path& policy_path, const fs::path& eval_data, const std::optional<CostSchedule>& costs,
                 const std::optional<fs::path>& train_data, const fs::path& out) {
  return run_guarded([&] {
    std::ifstream in(policy_path);
    if (!in) throw SchemaError("cannot open policy file " + policy_path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("policy file is not valid JSON: " + std::string(e.what()));
    }
    const auto policy = policy_from_json(j);
    const CostSchedule c =
        costs ? *costs : CostSchedule(j.at("costs").at("c1").get<double>(), j.at("costs").at("c2").get<double>());
    const Dataset data = read_dataset_csv(eval_data);
    std::optional<RecallThresholds> thresholds;
    if (train_data) {
      const Dataset train = read_dataset_csv(*train_data);
      std::vector<double> labels;
      for (const auto& r : train.records()) labels.push_back(r.y);
      thresholds = recall_thresholds(training_scores(*policy, train), labels);
    }
    const EvaluationReport report = evaluate(*policy, data, c, thresholds);
    prepare(out);
    write_json(out / "report.json", report.to_json());
    write_text(out / "report.csv",
               join(EvaluationReport::csv_columns()) + "\n" + join(report.csv_fields()) + "\n");
    spdlog::info("{}: total loss {:.6f}, average cost {:.6f}", report.method, report.total_loss, report.average_cost);
    return kExitOk;
  });
}

int cmd_compare(const RunConfig& config, const fs::path& out) {
  return run_guarded([&] {
    const CompareResult result = run_compare(config);
    prepare(out);
    write_text(out / "resolved_config.toml", to_toml(config));
    std::ostringstream csv;
    write_compare_csv(csv, result.rows);
    write_text(out / "results.csv", csv.str());
    std::string failures;
    for (const auto& f : result.failures) {
      spdlog::error("run failed: {}", f);
      failures += f + "\n";
    }
    write_text(out / "failures.log", failures);
    spdlog::info("{} rows written, {} failures", result.rows.size(), result.failures.size());
    return result.failures.empty() ? kExitOk : kExitPartial;
  });
}

int cmd_sweep(const RunConfig& config, const fs::path& out) {
  return run_guarded([&] {
    config.validate();
    if (!config.budget.target) throw ConfigError("budget.target is required for a sweep");
    const CostSchedule costs = config.resolved_costs();
    const std::size_t n = config.n.front();
    const std::string setting = config.settings.front();
    std::vector<std::string> cols = {"seed", "lambda", "selected"};
    for (auto& c : EvaluationReport::csv_columns()) cols.push_back(c);
    std::string csv = join(cols) + "\n";
    nlohmann::json selected = nlohmann::json::array();
    for (std::uint64_t seed : config.seeds) {
      const auto cell = simulate_cell(config, n, seed);
      const Dataset test = simulate_test_set(config, seed);
      const CostqConfig cfg = method_config(config, setting, seed);
      PolicyFitter fitter = [&](const CostSchedule& scaled) -> std::unique_ptr<Policy> {
        return std::make_unique<ContrastPolicy>(learn_policy(cell.observed.data, scaled, cfg).policy);
      };
      const auto r = budget_sweep(fitter, test, costs, config.budget.lambdas, *config.budget.target,
                                  resolve_jobs(config.jobs));
      for (std::size_t k = 0; k < r.entries.size(); ++k) {
        std::vector<std::string> f = {std::to_string(seed), format_double(r.entries[k].lambda),
                                      k == r.selected ? "1" : "0"};
        for (auto& v : r.entries[k].report.csv_fields()) f.push_back(std::move(v));
        csv += join(f) + "\n";
      }
      selected.push_back({{"seed", seed}, {"lambda_star", r.lambda_star}, {"report", r.report.to_json()}});
    }
    prepare(out);
    write_text(out / "resolved_config.toml", to_toml(config));
    write_text(out / "sweep.csv", csv);
    write_json(out / "selected.json", {{"target", *config.budget.target}, {"runs", selected}});
    return kExitOk;
  });
}

int cmd_serve(const fs::path& policy_path, const std::string& host, int port) {
  return run_guarded([&] {
    std::ifstream in(policy_path);
    if (!in) throw SchemaError("cannot open policy file " + policy_path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("policy file is not valid JSON: " + std::string(e.what()));
    }
    std::shared_ptr<const Policy> policy = policy_from_json(j);
    SessionManager sessions(policy, j);
    httplib::Server server;
    mount_routes(server, sessions);
    g_server = &server;
    std::signal(SIGINT, stop_server);
    std::signal(SIGTERM, stop_server);
    if (!server.bind_to_port(host, port)) {
      g_server = nullptr;
      throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
    }
    spdlog::info("serving {} policy on {}:{}", policy->method(), host, port);
    server.listen_after_bind();
    g_server = nullptr;
    return kExitOk;
  });
}

}  // namespace costq
