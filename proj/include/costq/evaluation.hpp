#pragma once

#include "costq/policy.hpp"
#include "costq/types.hpp"

#include <json.hpp>

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace costq {

/// Outcome of running a policy on one fully observed record.
struct Trajectory {
  AcquisitionPath path;
  InformationState terminal = InformationState::S0;
  double prediction = 0.0;
  double prediction_loss = 0.0;
  double cost = 0.0;
  double total = 0.0;
};

/// Executes d0 and, when a test was acquired, the second-stage rule; predicts at the
/// terminal state. Throws MissingBlock when a revealed block is absent.
Trajectory apply_policy(const Policy& policy, const Record& record, const CostSchedule& costs,
                        OutcomeKind outcome = OutcomeKind::binary);

// ---------------------------------------------------------------------------
// Discrimination metrics
// ---------------------------------------------------------------------------

/// Mann-Whitney AUC with ties counted as 1/2. NaN when either class is empty.
double auc(std::span<const double> scores, std::span<const double> labels);

/// Largest threshold t such that classifying score >= t as positive reaches
/// recall >= target. Throws NoPositives when no label is 1.
double threshold_at_recall(std::span<const double> scores, std::span<const double> labels, double target);

struct OperatingPoint {
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double gmean = 0.0;
};

/// Sensitivity and specificity of the rule score >= threshold. Rates with an empty
/// class are NaN.
OperatingPoint operating_point(std::span<const double> scores, std::span<const double> labels, double threshold);

/// Thresholds at recall 0.90 and 0.95, frozen from training scores.
struct RecallThresholds {
  double recall90 = 0.0;
  double recall95 = 0.0;
};

RecallThresholds recall_thresholds(std::span<const double> scores, std::span<const double> labels);

/// Scores of training records at their observed terminal state.
std::vector<double> training_scores(const Policy& policy, const Dataset& train);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvaluationReport {
  std::string method;
  std::size_t n = 0;
  double total_loss = 0.0;
  double prediction_loss = 0.0;
  double average_cost = 0.0;
  std::array<double, 5> path_proportions{};  // ordered as kValidPaths
  double average_tests = 0.0;
  std::optional<double> auc;
  std::optional<OperatingPoint> recall90;
  std::optional<OperatingPoint> recall95;
  std::optional<double> value_estimate;

  nlohmann::json to_json() const;
  static EvaluationReport from_json(const nlohmann::json& j);

  /// Flat CSV columns; optional fields are empty when absent.
  static std::vector<std::string> csv_columns();
  std::vector<std::string> csv_fields() const;
  static EvaluationReport from_csv_fields(const std::vector<std::string>& fields);
};

/// Applies the policy to every record of a fully observed dataset. Binary outcomes also
/// get the AUC and, when thresholds are given, operating points at recall 90 and 95.
EvaluationReport evaluate(const Policy& policy, const Dataset& data, const CostSchedule& costs,
                          const std::optional<RecallThresholds>& thresholds = std::nullopt);

// ---------------------------------------------------------------------------
// Matched-budget sweep
// ---------------------------------------------------------------------------

/// Fits a policy for training costs (already scaled by lambda).
using PolicyFitter = std::function<std::unique_ptr<Policy>(const CostSchedule& training_costs)>;

struct BudgetSweepEntry {
  double lambda = 0.0;
  EvaluationReport report;
};

struct BudgetSweepResult {
  double lambda_star = 0.0;
  std::size_t selected = 0;
  EvaluationReport report;
  std::vector<BudgetSweepEntry> entries;
};

/// Retrains with costs lambda * c for every lambda, evaluates each fit with the original
/// costs, and keeps the one whose realized average cost is closest to `budget`
/// (ties to the smaller lambda).
BudgetSweepResult budget_sweep(const PolicyFitter& fit, const Dataset& eval, const CostSchedule& costs,
                               std::span<const double> lambdas, double budget, int jobs = 1);

}  // namespace costq
