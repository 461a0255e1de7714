#pragma once

#include "costq/dr_engine.hpp"
#include "costq/simgen.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace costq {

struct BudgetConfig {
  std::vector<double> lambdas = {0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 4.5, 5.0, 5.5, 6.0, 8.0};
  std::optional<double> target;
};

/// Experiment description shared by the CLI subcommands. Every field has a default.
struct RunConfig {
  std::string scenario = "scenario1";
  std::vector<std::string> settings = {"A"};
  std::vector<std::size_t> n = {400};
  std::vector<std::uint64_t> seeds = {1};
  std::vector<std::string> methods = {"costq", "only_complete", "one_time", "always_stop", "always_test_all"};
  /// Scenario defaults when absent.
  std::optional<CostSchedule> costs;
  std::size_t test_size = 5000;
  std::string output = "costq_out";
  int jobs = 1;
  BehaviorPolicy behavior;
  CostqConfig costq;
  BudgetConfig budget;

  CostSchedule resolved_costs() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Parses TOML text. Syntax errors, unknown keys and type mismatches raise ConfigError
/// with the source name and line.
RunConfig parse_run_config(std::string_view text, std::string_view source = "config");
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully resolved configuration as TOML (costs filled in from the scenario when absent).
/// Parsing the text back yields the same resolved configuration.
std::string to_toml(const RunConfig& config);

}  // namespace costq
