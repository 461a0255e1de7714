#include "costq/commands.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <optional>

namespace fs = std::filesystem;
using namespace costq;

namespace {

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "TOML run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "Output directory (overrides the config)");
  cmd->add_option("--seed", o.seed, "Run a single seed instead of the configured list");
  cmd->add_option("--jobs", o.jobs, "Worker threads (COSTQ_JOBS takes precedence)");
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) c.seeds = {*o.seed};
  if (o.jobs) c.jobs = *o.jobs;
  if (!o.out.empty()) c.output = o.out;
  c.validate();
  return c;
}

std::pair<std::string, int> parse_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw ConfigError("bind address must look like host:port");
  try {
    return {bind.substr(0, colon), std::stoi(bind.substr(colon + 1))};
  } catch (const std::exception&) {
    throw ConfigError("invalid port in bind address '" + bind + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cost-aware sequential test acquisition with doubly robust Q-learning"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  CommonOptions sim_opts, fit_opts, cmp_opts, sweep_opts;
  auto* simulate = app.add_subcommand("simulate", "Write simulated observed, full and test datasets");
  add_common(simulate, sim_opts);

  auto* fit = app.add_subcommand("fit", "Fit one method on a dataset and write policy.json");
  add_common(fit, fit_opts);
  std::string fit_data;
  std::string method = "costq";
  fit->add_option("--data", fit_data, "Observed dataset CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--method", method, "costq, only_complete, one_time, always_stop or always_test_all");

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a policy file on fully observed data");
  std::string policy_path, eval_data, train_data, eval_out = "costq_eval";
  std::vector<double> costs;
  evaluate->add_option("--policy", policy_path, "Policy JSON")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--data", eval_data, "Fully observed evaluation CSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--train", train_data, "Training CSV used to freeze recall thresholds")
      ->check(CLI::ExistingFile);
  evaluate->add_option("--costs", costs, "Test costs c1 c2 (default: the policy's)")->expected(2);
  evaluate->add_option("--out", eval_out, "Output directory");

  auto* compare = app.add_subcommand("compare", "Run methods x settings x n x seeds into results.csv");
  add_common(compare, cmp_opts);

  auto* sweep = app.add_subcommand("sweep", "Matched-budget lambda sweep for COST-Q");
  add_common(sweep, sweep_opts);

  auto* serve = app.add_subcommand("serve", "Serve a policy over HTTP");
  std::string serve_policy, bind = "127.0.0.1:8080";
  serve->add_option("--policy", serve_policy, "Policy JSON")->required();
  serve->add_option("--bind", bind, "host:port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  spdlog::set_default_logger(spdlog::stderr_color_mt("costq"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  return run_guarded([&]() -> int {
    if (*simulate) {
      const RunConfig c = resolve(sim_opts);
      return cmd_simulate(c, c.output);
    }
    if (*fit) {
      const RunConfig c = resolve(fit_opts);
      return cmd_fit(c, fit_data, method, c.output);
    }
    if (*evaluate) {
      std::optional<CostSchedule> c;
      if (!costs.empty()) c = CostSchedule(costs[0], costs[1]);
      std::optional<fs::path> train;
      if (!train_data.empty()) train = train_data;
      return cmd_evaluate(policy_path, eval_data, c, train, eval_out);
    }
    if (*compare) {
      const RunConfig c = resolve(cmp_opts);
      return cmd_compare(c, c.output);
    }
    if (*sweep) {
      const RunConfig c = resolve(sweep_opts);
      return cmd_sweep(c, c.output);
    }
    const auto [host, port] = parse_bind(bind);
    return cmd_serve(serve_policy, host, port);
  });
}
