#pragma once

#include "costq/config.hpp"
#include "costq/evaluation.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace costq {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitData = 3, kExitPartial = 4 };

/// Maps an exception to its exit code and logs it.
int exit_code_for(const std::exception& e);
/// Runs `body`, converting thrown errors into exit codes.
int run_guarded(const std::function<int()>& body);

/// Learner configuration for one misspecification setting and seed.
CostqConfig method_config(const RunConfig& config, std::string_view setting, std::uint64_t seed);

struct SimulatedCell {
  ObservedData observed;
  Dataset full;
};

/// Training data of the (n, seed) cell; the same for every setting and method.
SimulatedCell simulate_cell(const RunConfig& config, std::size_t n, std::uint64_t seed);
/// Fully observed test set of config.test_size records for `seed`.
Dataset simulate_test_set(const RunConfig& config, std::uint64_t seed);

/// Fit, freeze training thresholds, evaluate. The value estimate is filled for costq.
EvaluationReport fit_and_evaluate(std::string_view method, const Dataset& train, const Dataset& test,
                                  const CostSchedule& costs, const CostqConfig& config);

struct CompareRow {
  std::string setting;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  EvaluationReport report;
};

struct CompareResult {
  std::vector<CompareRow> rows;  // sorted by setting, n, seed, method order
  std::vector<std::string> failures;
};

CompareResult run_compare(const RunConfig& config);
std::vector<std::string> compare_columns();
void write_compare_csv(std::ostream& out, const std::vector<CompareRow>& rows);
std::vector<CompareRow> read_compare_csv(std::istream& in);

// Subcommands. Each returns an ExitCode and writes its outputs under `out`.
int cmd_simulate(const RunConfig& config, const std::filesystem::path& out);
int cmd_fit(const RunConfig& config, const std::filesystem::path& dataset, std::string_view method,
            const std::filesystem::path& out);
int cmd_evaluate(const std::filesystem::path& policy, const std::filesystem::path& eval_data,
                 const std::optional<CostSchedule>& costs, const std::optional<std::filesystem::path>& train_data,
                 const std::filesystem::path& out);
int cmd_compare(const RunConfig& config, const std::filesystem::path& out);
int cmd_sweep(const RunConfig& config, const std::filesystem::path& out);
int cmd_serve(const std::filesystem::path& policy, const std::string& host, int port);

}  // namespace costq
