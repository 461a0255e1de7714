#pragma once

#include "costq/learners.hpp"
#include "costq/nuisance.hpp"
#include "costq/policy.hpp"

#include <json.hpp>

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace costq {

// ---------------------------------------------------------------------------
// Scalar building blocks
// ---------------------------------------------------------------------------

/// prediction + weight * (label - prediction); returns `prediction` untouched when the
/// weight is zero, so an undefined label never leaks in.
double pseudo_outcome(double prediction, double weight, double label);

/// Stage-2 pseudo-outcome for a record with S1 = j. `pi` is the clipped P(S2 = jc | X_j).
/// `e12` and `ej` are only read when the record continued to test jc.
double pseudo_outcome_stage2(const Record& record, int j, double aux, double pi, double e12, double ej);

/// Stage-1 pseudo-outcome, defined for every record. `pi` is the clipped P(S1 = j | x0);
/// `qtilde` and `e0` are only read when S1 = j.
double pseudo_outcome_stage1(const Record& record, int j, double aux, double pi, double qtilde, double e0);

/// jc when the contrast is strictly negative, otherwise 0 (stop).
int rule_stage2(double contrast, int j);
int rule_stage2(const FittedModel& contrast, const Vector& xj, int j);

/// j when its contrast is negative and strictly below the other one; exact negative ties
/// go to the cheaper test (test 1 when costs tie); 0 when both contrasts are >= 0.
int rule_stage0(double contrast1, double contrast2, const CostSchedule& costs);
int rule_stage0(const FittedModel& contrast1, const FittedModel& contrast2, const Vector& x0,
                const CostSchedule& costs);

/// E_j + min(0, contrast), the value of continuing optimally from test j.
double continuation_value(double ej, double contrast);
/// Record-level form; throws MissingBlock when X_j is not observed.
double continuation_value(const Record& record, int j, double ej, const FittedModel& contrast);

/// Squared-error fit of `phi` (indexed by record) on X_j over the S1 = j rows among `rows`.
FittedModel fit_dr_contrast_stage2(const Dataset& data, std::span<const std::size_t> rows,
                                   const std::vector<double>& phi, int j, const LearnerConfig& config);

/// Squared-error fit of `phi` (indexed by record) on x0 over every row in `rows`.
FittedModel fit_dr_contrast_stage1(const Dataset& data, std::span<const std::size_t> rows,
                                   const std::vector<double>& phi, const LearnerConfig& config);

/// Mean over records of E0 + phi1 * 1{d0 = 1} + phi2 * 1{d0 = 2}.
double estimate_policy_value(std::span<const double> e0, std::span<const double> phi1,
                             std::span<const double> phi2, std::span<const int> d0);

// ---------------------------------------------------------------------------
// Learned policy
// ---------------------------------------------------------------------------

struct TrainingInfo {
  std::size_t n = 0;
  int K = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline constexpr const char* kTieBreakPolicy = "stage2: zero contrast stops; stage0: negative tie goes to the cheaper test, cost tie to test 1";

/// Policy defined by four contrast functions plus the per-state outcome models.
class ContrastPolicy : public Policy {
 public:
  ContrastPolicy(std::string method, BlockDims dims, OutcomeKind outcome, CostSchedule costs, double clip,
                 CoreModels core, std::array<FittedModel, 2> stage2, std::array<FittedModel, 2> stage1,
                 TrainingInfo training);

  std::string method() const override { return method_; }
  const BlockDims& dims() const override { return dims_; }
  OutcomeKind outcome() const noexcept { return outcome_; }
  const CostSchedule& costs() const noexcept { return costs_; }
  double clip() const noexcept { return clip_; }
  const CoreModels& core() const noexcept { return core_; }
  const TrainingInfo& training() const noexcept { return training_; }

  /// Contrast of continuing from test j to the other test, at xj = (x0, x_j).
  double contrast_stage2(int j, const Vector& xj) const;
  /// Contrast of starting with test j, at x0.
  double contrast_stage1(int j, const Vector& x0) const;
  const FittedModel& stage2_model(int j) const { return stage2_.at(static_cast<std::size_t>(j - 1)); }
  const FittedModel& stage1_model(int j) const { return stage1_.at(static_cast<std::size_t>(j - 1)); }

  int decide0(const Vector& x0) const override;
  int decide_stage2(int j, const Vector& xj) const override;
  double predict(InformationState s, const Vector& features) const override;

 private:
  std::string method_;
  BlockDims dims_;
  OutcomeKind outcome_;
  CostSchedule costs_;
  double clip_;
  CoreModels core_;
  std::array<FittedModel, 2> stage2_;
  std::array<FittedModel, 2> stage1_;
  TrainingInfo training_;
};

LearnerConfig default_core_learner();
LearnerConfig default_propensity_learner(int num_classes);
LearnerConfig default_contrast_learner();

struct CostqConfig {
  int folds = 5;
  double clip = 0.01;
  std::uint64_t seed = 0;
  bool nested_stage2 = false;
  int jobs = 1;
  LearnerConfig core = default_core_learner();
  LearnerConfig propensity_stage1 = default_propensity_learner(3);
  LearnerConfig propensity_stage2 = default_propensity_learner(2);
  LearnerConfig aux_contrast = default_contrast_learner();
  LearnerConfig dr_contrast = default_contrast_learner();

  void validate() const;
  /// Stable digest of every field, written into policy files.
  std::string hash() const;
  nlohmann::json to_json() const;
};

/// Replacements for fitted nuisances, used by oracle experiments. Every provided
/// quantity is used both out-of-fold and inside the fold-specific fits.
struct NuisanceInjection {
  const CorePredictor* core = nullptr;
  /// Per record: P(S1 = a | x0) for a = 0, 1, 2.
  std::optional<std::vector<std::array<double, 3>>> stage1_propensity;
  /// Per record with S1 = j: P(S2 = jc | X_j); other entries ignored.
  std::optional<std::vector<double>> stage2_propensity;
  /// (j, X_j) -> auxiliary contrast for continuing from test j.
  std::function<double(int, const Vector&)> stage2_aux;
  /// (j, x0) -> auxiliary contrast for starting with test j.
  std::function<double(int, const Vector&)> stage1_aux;
};

/// Per-record pseudo-outcome table. Stage-2 entries refer to the record's own first test
/// and are NaN when S1 = 0; index j-1 of the stage-1 arrays refers to test j.
struct PseudoOutcomeTable {
  std::vector<double> stage2;
  std::vector<double> stage2_weight;
  std::vector<double> stage2_aux;
  std::vector<double> fold_contrast_stage2;
  std::vector<double> qtilde;
  std::array<std::vector<double>, 2> stage1;
  std::array<std::vector<double>, 2> stage1_weight;
  std::array<std::vector<double>, 2> stage1_aux;
};

/// Training rows of one nuisance fit attached to fold k.
struct NuisanceTrace {
  std::string name;
  int fold = 0;
  std::vector<std::size_t> rows;
};

struct CostqDiagnostics {
  FoldAssignment folds{{}, 2, 0};
  LossTable losses;
  PropensityValues propensities;  // out-of-fold, unclipped
  double stage1_clip_rate = 0.0;
  double stage2_clip_rate = 0.0;
  PseudoOutcomeTable pseudo;
  std::vector<int> fold_d0;  // first-stage action of the fold-specific rule, per record
  double value_estimate = 0.0;
  std::vector<double> stage1_heldout_loss;  // per fold, first-stage propensity cross-entropy
  std::vector<double> stage2_heldout_loss;  // per fold, second-stage propensity cross-entropy
  std::vector<NuisanceTrace> traces;
  std::array<std::vector<FittedModel>, 2> fold_stage2_contrasts;

  nlohmann::json to_json() const;
};

struct CostqFit {
  ContrastPolicy policy;
  CostqDiagnostics diagnostics;
};

/// Full cross-fitted backward procedure.
CostqFit learn_policy(const Dataset& data, const CostSchedule& costs, const CostqConfig& config,
                      const NuisanceInjection& injection = {});

/// True when no trace's rows intersect the fold it serves.
bool verify_out_of_fold(const CostqDiagnostics& diagnostics);

}  // namespace costq
