#pragma once

#include "costq/dr_engine.hpp"
#include "costq/nuisance.hpp"
#include "costq/policy.hpp"
#include "costq/rng.hpp"
#include "costq/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace costq {

// ---------------------------------------------------------------------------
// Data-generating processes
// ---------------------------------------------------------------------------

/// A fully specified joint law of (X0, X1, X2, Y) with scalar blocks and binary Y.
class Scenario {
 public:
  using Integrand = std::function<double(double)>;

  virtual ~Scenario() = default;

  virtual std::string name() const = 0;
  BlockDims dims() const { return {1, 1, 1}; }
  virtual CostSchedule default_costs() const = 0;
  /// Every feature lies in [first, second].
  virtual std::pair<double, double> support() const = 0;

  virtual double sample_x0(Rng& rng) const = 0;
  /// Draws X_j given X0 = x0 and, when `other` is not null, the other test block.
  virtual double sample_block(int j, double x0, const double* other, Rng& rng) const = 0;
  /// P(Y = 1 | X0, X1, X2).
  virtual double outcome_mean(double x0, double x1, double x2) const = 0;
  /// E[f(X_j) | X0 = x0, X_jc = *other], or given x0 alone when `other` is null.
  virtual double integrate_block(int j, double x0, const double* other, const Integrand& f) const = 0;
};

/// Scenarios whose test blocks are independent given X0; integration uses a
/// composite Gauss-Legendre rule against the conditional density of each block.
class ConditionallyIndependentScenario : public Scenario {
 public:
  double integrate_block(int j, double x0, const double* other, const Integrand& f) const override;

 protected:
  /// Quadrature nodes and normalized weights for X_j | X0 = x0.
  virtual void block_rule(int j, double x0, std::vector<double>& nodes, std::vector<double>& weights) const = 0;
};

/// X0 ~ N(0,1) truncated to [-2,2]; X1, X2 | X0 ~ N(X0, 0.9^2) truncated to [-2,2];
/// logit P(Y=1) = 0.15 X0 + 1.2 X1 + 1.2 X2 + 8 sin(2 X1) sin(2 X2) / 2.2.
class Scenario1 : public ConditionallyIndependentScenario {
 public:
  std::string name() const override { return "scenario1"; }
  CostSchedule default_costs() const override { return {0.01, 0.02}; }
  std::pair<double, double> support() const override { return {-2.0, 2.0}; }
  double sample_x0(Rng& rng) const override;
  double sample_block(int j, double x0, const double* other, Rng& rng) const override;
  double outcome_mean(double x0, double x1, double x2) const override;

 protected:
  void block_rule(int j, double x0, std::vector<double>& nodes, std::vector<double>& weights) const override;
};

/// X0, X1, X2 iid Unif(0,1); logit P(Y=1) = eta(X) / 3 with
/// eta = 2.5(X0-.5) + 3(X1-.5) + 3(X2-.5) + 4 sin(2 pi X1)(X2-.5) + 2(X0-.5)(X1-.5).
class Scenario2Like : public ConditionallyIndependentScenario {
 public:
  std::string name() const override { return "scenario2_like"; }
  CostSchedule default_costs() const override { return {0.004, 0.002}; }
  std::pair<double, double> support() const override { return {0.0, 1.0}; }
  double sample_x0(Rng& rng) const override;
  double sample_block(int j, double x0, const double* other, Rng& rng) const override;
  double outcome_mean(double x0, double x1, double x2) const override;

 protected:
  void block_rule(int j, double x0, std::vector<double>& nodes, std::vector<double>& weights) const override;
};

/// Tests carry no information: X1, X2 ~ N(0,1) truncated to [-2,2], independent of
/// X0; logit P(Y=1) = 1.5 X0.
class NoiseTestsScenario : public Scenario1 {
 public:
  std::string name() const override { return "noise_tests"; }
  double sample_block(int j, double x0, const double* other, Rng& rng) const override;
  double outcome_mean(double x0, double x1, double x2) const override;

 protected:
  void block_rule(int j, double x0, std::vector<double>& nodes, std::vector<double>& weights) const override;
};

/// Test 2 duplicates test 1 (X2 = X1); logit P(Y=1) = 0.15 X0 + 1.5 X1.
class DuplicateTestScenario : public Scenario1 {
 public:
  std::string name() const override { return "duplicate_test"; }
  double sample_block(int j, double x0, const double* other, Rng& rng) const override;
  double outcome_mean(double x0, double x1, double x2) const override;
  double integrate_block(int j, double x0, const double* other, const Integrand& f) const override;
};

/// "scenario1", "scenario2_like", "noise_tests" or "duplicate_test".
std::unique_ptr<Scenario> make_scenario(std::string_view name);

/// Draws from N(mean, sd^2) truncated to [lo, hi] by rejection.
double sample_truncated_normal(Rng& rng, double mean, double sd, double lo, double hi);

/// n fully observed records. Every record carries the placeholder path (1,2).
Dataset generate_full(const Scenario& scenario, std::size_t n, std::uint64_t seed);
Dataset generate_scenario1(std::size_t n, std::uint64_t seed);
Dataset generate_scenario2_like(std::size_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Behavior policy
// ---------------------------------------------------------------------------

/// First stage: softmax over scores (0, a1 + b1 mean(x0), a2 + b2 mean(x0)).
/// Second stage: P(continue | S1 = j) = logistic(alpha + beta mean(x_j) + gamma mean(x0)).
struct BehaviorPolicy {
  double a1 = 0.2;
  double b1 = 0.6;
  double a2 = 0.2;
  double b2 = -0.6;
  double alpha = -0.3;
  double beta = 1.2;
  double gamma = 0.0;
  double bound = 0.05;
  bool enforce_bound = true;

  std::array<double, 3> stage1(const Vector& x0) const;
  double continue_prob(int j, const Vector& x0, const Vector& xj) const;

  /// Throws ConfigError when some probability on the scenario's support leaves [bound, 1-bound].
  void check_positivity(const Scenario& scenario) const;
  /// A policy whose actions do not depend on any feature.
  static BehaviorPolicy uninformative();
};

struct ObservedData {
  Dataset data;
  PropensityValues truth;  // true behavior probabilities per record
};

/// Samples acquisition paths and masks the unvisited blocks. The sampler reads only
/// x0 before the first decision and (x0, x_j) before the second, and consumes exactly
/// two uniforms per record.
ObservedData apply_behavior_policy(const Dataset& full, const BehaviorPolicy& behavior, std::uint64_t seed);

void write_propensities_csv(const std::filesystem::path& path, const PropensityValues& truth);

// ---------------------------------------------------------------------------
// Exact oracle quantities (quadrature)
// ---------------------------------------------------------------------------

/// Expected cross-entropy E[L(Y, m)] when P(Y=1) = q, with the same clamping as the loss.
double expected_cross_entropy(double q, double m);

/// The true m_s at features_at_state order.
double true_mean(const Scenario& scenario, InformationState s, const Vector& features);

class TrueCoreModels : public CorePredictor {
 public:
  explicit TrueCoreModels(const Scenario& scenario) : scenario_(scenario) {}
  Vector predict(InformationState s, const Matrix& X) const override;

 private:
  const Scenario& scenario_;
};

/// Delta*_{jc|j} at xj = (x0, x_j).
double exact_stage2_contrast(const Scenario& scenario, const CostSchedule& costs, int j, const Vector& xj);
/// Q*_j at xj = (x0, x_j).
double exact_q_star(const Scenario& scenario, const CostSchedule& costs, int j, const Vector& xj);
/// Delta*_{j|0} at x0.
double exact_stage1_contrast(const Scenario& scenario, const CostSchedule& costs, int j, const Vector& x0);

/// The optimal policy with true conditional means as terminal predictions.
class OraclePolicy : public Policy {
 public:
  OraclePolicy(const Scenario& scenario, CostSchedule costs);

  std::string method() const override { return "oracle"; }
  const BlockDims& dims() const override { return dims_; }
  int decide0(const Vector& x0) const override;
  int decide_stage2(int j, const Vector& xj) const override;
  double predict(InformationState s, const Vector& features) const override;

 private:
  const Scenario& scenario_;
  CostSchedule costs_;
  BlockDims dims_;
};

// ---------------------------------------------------------------------------
// Monte Carlo oracle tables
// ---------------------------------------------------------------------------

struct GridSpec {
  int points = 41;
  std::optional<double> lo;
  std::optional<double> hi;
};

struct OracleCell {
  double mean = 0.0;
  double se = 0.0;
  std::size_t count = 0;
};

/// Brute-force estimates on a regular grid. Stage-2 tables are indexed
/// [a * points + b] for (x0 = grid[a], x_j = grid[b]); stage-1 tables by x0.
struct OracleTables {
  std::string scenario;
  CostSchedule costs;
  std::vector<double> grid;
  std::size_t mc_samples = 0;
  std::uint64_t seed = 0;
  std::array<std::vector<OracleCell>, 2> stage2_contrast;  // index j-1: Delta*_{jc|j}
  std::array<std::vector<OracleCell>, 2> q_star;           // index j-1: Q*_j
  std::array<std::vector<int>, 2> stage2_action;
  std::array<std::vector<OracleCell>, 2> stage1_contrast;  // index j-1: Delta*_{j|0}
  std::vector<OracleCell> optimal_value;                   // E[min(E0, Q*_1, Q*_2) | x0]
  std::vector<int> stage0_action;

  /// Bilinear interpolation of a stage-2 table at (x0, x_j); returns {mean, se}.
  std::pair<double, double> interpolate_stage2(int j, double x0, double xj) const;
  nlohmann::json to_json() const;
  static OracleTables from_json(const nlohmann::json& j);
};

/// Each cell draws its own stream from (seed, cell index), so results do not depend on `jobs`.
OracleTables oracle_tables(const Scenario& scenario, const CostSchedule& costs, const GridSpec& grid,
                           std::size_t mc_samples, std::uint64_t seed, bool include_stage1 = true, int jobs = 1);

// ---------------------------------------------------------------------------
// Nuisance misspecification
// ---------------------------------------------------------------------------

enum class MisspecSetting { A, B, C };

MisspecSetting misspec_from_string(std::string_view name);
std::string_view to_string(MisspecSetting setting);

/// A: no overrides. B: constant-probability propensity models. C: intercept-only
/// auxiliary contrasts.
struct MisspecPlan {
  MisspecSetting setting = MisspecSetting::A;
  std::optional<LearnerConfig> propensity_stage1;
  std::optional<LearnerConfig> propensity_stage2;
  std::optional<LearnerConfig> aux_contrast;

  void apply(CostqConfig& config) const;
};

MisspecPlan nuisance_misspec(MisspecSetting setting);

}  // namespace costq
