#pragma once

#include "costq/learners.hpp"
#include "costq/policy.hpp"
#include "costq/types.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace costq {

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

class FoldAssignment {
 public:
  FoldAssignment(std::vector<int> fold_of, int K, std::uint64_t seed);

  int K() const noexcept { return K_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t size() const noexcept { return fold_of_.size(); }
  int fold_of(std::size_t i) const { return fold_of_.at(i); }
  const std::vector<int>& folds() const noexcept { return fold_of_; }

  /// Rows in fold k, ascending.
  std::vector<std::size_t> in_fold(int k) const;
  /// Rows outside fold k, ascending.
  std::vector<std::size_t> training(int k) const;

 private:
  std::vector<int> fold_of_;
  int K_;
  std::uint64_t seed_;
};

/// Balanced random partition of n rows into K folds.
FoldAssignment make_folds(std::size_t n, int K, std::uint64_t seed);

/// Balanced partition stratified by `strata`: rows of each stratum are shuffled and
/// dealt to folds in turn, so every fold sees every stratum when it has >= K members.
FoldAssignment make_folds(const std::vector<int>& strata, int K, std::uint64_t seed);

/// Stratifies by the first acquisition action.
FoldAssignment make_folds(const Dataset& data, int K, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Core models
// ---------------------------------------------------------------------------

/// Fitted m_s for the four states, each trained on its unweighted index set.
class CoreModels : public CorePredictor {
 public:
  CoreModels() = default;
  explicit CoreModels(std::array<FittedModel, 4> models) : models_(std::move(models)) {}

  const FittedModel& model(InformationState s) const { return models_[static_cast<std::size_t>(s)]; }
  Vector predict(InformationState s, const Matrix& X) const override;

 private:
  std::array<FittedModel, 4> models_;
};

/// Index set used to fit m_s: all rows for S0, {S1 = j} for the single-test states,
/// and both ordered terminal paths pooled for S12.
std::vector<std::size_t> core_index_set(const Dataset& data, InformationState s);

/// Fits m_s on the given rows at state s. Classifier kinds become logistic for binary
/// outcomes and linear for continuous ones.
FittedModel fit_outcome_model(const Dataset& data, std::span<const std::size_t> rows, InformationState s,
                              const LearnerConfig& config);

/// Logistic learners are used for binary outcomes; pass a linear or kernel
/// configuration for continuous outcomes.
CoreModels fit_core_models(const Dataset& data, const LearnerConfig& config);

/// Per-record cost-augmented losses E_s; NaN where state s is not observable for the record.
struct LossTable {
  std::vector<std::array<double, 4>> E;
  double at(std::size_t i, InformationState s) const { return E.at(i)[static_cast<std::size_t>(s)]; }
};

LossTable compute_losses(const Dataset& data, const CorePredictor& core, const CostSchedule& costs);

// ---------------------------------------------------------------------------
// Propensities
// ---------------------------------------------------------------------------

double clip_propensity(double p, double eps);

/// Nuisance models trained on one training sample.
struct PropensityModels {
  FittedModel stage1;                // softmax over {0,1,2} on x0
  std::array<FittedModel, 2> stage2; // index j-1: P(S2 = jc | S1 = j, X_j)
};

PropensityModels fit_propensity_models(const Dataset& data, std::span<const std::size_t> rows,
                                       const LearnerConfig& stage1, const LearnerConfig& stage2);

/// Per-record propensities (unclipped); stage2 holds pi_{jc|j}(X_j) for S1 = j rows, NaN otherwise.
struct PropensityValues {
  std::vector<std::array<double, 3>> stage1;
  std::vector<double> stage2;
};

/// Evaluates `models` at `rows`, writing into `out` (sized to the dataset).
void evaluate_propensities(const Dataset& data, const PropensityModels& models,
                           std::span<const std::size_t> rows, PropensityValues& out);

struct PropensitySet {
  std::vector<PropensityModels> per_fold;
  PropensityValues out_of_fold;
  double clip = 0.01;
  double stage1_clip_rate = 0.0;
  double stage2_clip_rate = 0.0;
};

PropensitySet fit_propensities(const Dataset& data, const FoldAssignment& folds,
                               const LearnerConfig& stage1, const LearnerConfig& stage2, double clip,
                               int jobs = 1);

/// Fraction of the relevant entries that clipping at `eps` would change.
std::pair<double, double> clip_rates(const Dataset& data, const PropensityValues& values, double eps);

// ---------------------------------------------------------------------------
// Auxiliary contrasts
// ---------------------------------------------------------------------------

/// Rows of `rows` with ordered path (j, jc).
std::vector<std::size_t> ordered_path_rows(const Dataset& data, std::span<const std::size_t> rows, int j);
/// Rows of `rows` with S1 = j.
std::vector<std::size_t> first_action_rows(const Dataset& data, std::span<const std::size_t> rows, int j);

/// Regresses E12 - Ej on X_j over the ordered-path rows among `rows`.
FittedModel fit_stage2_aux(const Dataset& data, const LossTable& losses, std::span<const std::size_t> rows,
                           int j, const LearnerConfig& config);

/// Regresses the labels on x0 over the S1 = j rows among `rows`; `labels` is indexed by record.
FittedModel fit_stage1_aux(const Dataset& data, const std::vector<double>& labels,
                           std::span<const std::size_t> rows, int j, const LearnerConfig& config);

/// Per-fold auxiliary contrasts; index j-1 selects the test acquired first.
/// Stage-2 entries model E12 - Ej given X_j, stage-1 entries model Q~_j - E0 given x0.
struct AuxContrastSet {
  std::array<std::vector<FittedModel>, 2> stage2_per_fold;
  std::array<std::vector<FittedModel>, 2> stage1_per_fold;
  std::array<std::vector<std::vector<std::size_t>>, 2> stage2_training_rows;
  std::array<std::vector<std::vector<std::size_t>>, 2> stage1_training_rows;
};

/// Fills the stage-2 half of an AuxContrastSet, one fit per fold on D minus fold k.
AuxContrastSet fit_stage2_aux_contrasts(const Dataset& data, const FoldAssignment& folds,
                                        const LossTable& losses, const LearnerConfig& config, int jobs = 1);

/// Feature matrix for the given rows at the single-test state of j, i.e. (x0, x_j).
Matrix stage2_design(const Dataset& data, std::span<const std::size_t> rows, int j);
/// Baseline design x0 for the given rows.
Matrix baseline_design(const Dataset& data, std::span<const std::size_t> rows);

}  // namespace costq
