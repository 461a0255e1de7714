#include "costq/nuisance.hpp"

#include "costq/loss.hpp"
#include "costq/parallel.hpp"
#include "costq/rng.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace costq {

double CorePredictor::predict_one(InformationState s, const Vector& x) const {
  return predict(s, Matrix(x.transpose()))[0];
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

FoldAssignment::FoldAssignment(std::vector<int> fold_of, int K, std::uint64_t seed)
    : fold_of_(std::move(fold_of)), K_(K), seed_(seed) {
  for (int f : fold_of_) {
    if (f < 0 || f >= K_) throw ConfigError("fold index out of range");
  }
}

std::vector<std::size_t> FoldAssignment::in_fold(int k) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < fold_of_.size(); ++i) {
    if (fold_of_[i] == k) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> FoldAssignment::training(int k) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < fold_of_.size(); ++i) {
    if (fold_of_[i] != k) rows.push_back(i);
  }
  return rows;
}

FoldAssignment make_folds(const std::vector<int>& strata, int K, std::uint64_t seed) {
  if (K < 2) throw ConfigError("cross-fitting needs K >= 2");
  if (strata.size() < static_cast<std::size_t>(K)) {
    throw TooFewRecords("cannot split " + std::to_string(strata.size()) + " records into " +
                        std::to_string(K) + " folds");
  }
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < strata.size(); ++i) groups[strata[i]].push_back(i);
  Rng rng(derive_seed(seed, {0xF01D}));
  std::vector<int> fold_of(strata.size(), 0);
  std::size_t position = 0;
  for (auto& [label, rows] : groups) {
    std::shuffle(rows.begin(), rows.end(), rng.engine());
    for (std::size_t i : rows) fold_of[i] = static_cast<int>(position++ % static_cast<std::size_t>(K));
  }
  return FoldAssignment(std::move(fold_of), K, seed);
}

FoldAssignment make_folds(std::size_t n, int K, std::uint64_t seed) {
  return make_folds(std::vector<int>(n, 0), K, seed);
}

FoldAssignment make_folds(const Dataset& data, int K, std::uint64_t seed) {
  std::vector<int> strata(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) strata[i] = data[i].path.s1;
  return make_folds(strata, K, seed);
}

// ---------------------------------------------------------------------------
// Core models and losses
// ---------------------------------------------------------------------------

Vector CoreModels::predict(InformationState s, const Matrix& X) const { return model(s).predict(X); }

std::vector<std::size_t> core_index_set(const Dataset& data, InformationState s) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const AcquisitionPath p = data[i].path;
    bool keep = false;
    switch (s) {
      case InformationState::S0: keep = true; break;
      case InformationState::S1only: keep = p.s1 == 1; break;
      case InformationState::S2only: keep = p.s1 == 2; break;
      case InformationState::S12: keep = p.s2 != 0; break;
    }
    if (keep) rows.push_back(i);
  }
  return rows;
}

FittedModel fit_outcome_model(const Dataset& data, std::span<const std::size_t> rows, InformationState s,
                              const LearnerConfig& config) {
  const Matrix X = data.design(s, rows);
  const Vector y = data.outcomes(rows);
  if (config.kind == LearnerKind::logistic || config.kind == LearnerKind::softmax) {
    if (data.outcome() == OutcomeKind::binary) {
      LearnerConfig c = config;
      c.kind = LearnerKind::logistic;
      c.num_classes = 2;
      return fit_classifier(X, y.cast<int>(), c);
    }
    LearnerConfig c = config;
    c.kind = LearnerKind::linear;
    return fit_regressor(X, y, c);
  }
  return fit_regressor(X, y, config);
}

CoreModels fit_core_models(const Dataset& data, const LearnerConfig& config) {
  std::array<FittedModel, 4> models;
  for (auto s : kAllStates) {
    const auto rows = core_index_set(data, s);
    if (rows.empty()) {
      throw InsufficientSupport("no records available to fit the core model at state " +
                                std::string(to_string(s)));
    }
    models[static_cast<std::size_t>(s)] = fit_outcome_model(data, rows, s, config);
  }
  return CoreModels(std::move(models));
}

LossTable compute_losses(const Dataset& data, const CorePredictor& core, const CostSchedule& costs) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  LossTable table;
  table.E.assign(data.size(), {nan, nan, nan, nan});
  for (auto s : kAllStates) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Record& r = data[i];
      const bool ok = (!observes_block(s, 1) || r.x1) && (!observes_block(s, 2) || r.x2);
      if (ok) rows.push_back(i);
    }
    if (rows.empty()) continue;
    const Vector m = core.predict(s, data.design(s, rows));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::size_t i = rows[k];
      table.E[i][static_cast<std::size_t>(s)] =
          cost_augmented_loss(data[i].y, m[static_cast<Eigen::Index>(k)], s, costs, data.outcome());
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Propensities
// ---------------------------------------------------------------------------

double clip_propensity(double p, double eps) { return std::clamp(p, eps, 1.0 - eps); }

std::vector<std::size_t> first_action_rows(const Dataset& data, std::span<const std::size_t> rows, int j) {
  std::vector<std::size_t> out;
  for (std::size_t i : rows) {
    if (data[i].path.s1 == j) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> ordered_path_rows(const Dataset& data, std::span<const std::size_t> rows, int j) {
  std::vector<std::size_t> out;
  for (std::size_t i : rows) {
    if (data[i].path.s1 == j && data[i].path.s2 == other_test(j)) out.push_back(i);
  }
  return out;
}

Matrix stage2_design(const Dataset& data, std::span<const std::size_t> rows, int j) {
  return data.design(single_test_state(j), rows);
}

Matrix baseline_design(const Dataset& data, std::span<const std::size_t> rows) {
  return data.design(InformationState::S0, rows);
}

PropensityModels fit_propensity_models(const Dataset& data, std::span<const std::size_t> rows,
                                       const LearnerConfig& stage1, const LearnerConfig& stage2) {
  PropensityModels models;
  Eigen::VectorXi a1(static_cast<Eigen::Index>(rows.size()));
  std::array<int, 3> counts{0, 0, 0};
  for (std::size_t k = 0; k < rows.size(); ++k) {
    a1[static_cast<Eigen::Index>(k)] = data[rows[k]].path.s1;
    ++counts[static_cast<std::size_t>(data[rows[k]].path.s1)];
  }
  for (int a = 0; a < 3; ++a) {
    if (counts[static_cast<std::size_t>(a)] == 0) {
      throw InsufficientSupport("first-stage action " + std::to_string(a) +
                                " never occurs in the training sample (needed for pi_" + std::to_string(a) +
                                "|0)");
    }
  }
  LearnerConfig c1 = stage1;
  c1.kind = LearnerKind::softmax;
  c1.num_classes = 3;
  models.stage1 = fit_classifier(baseline_design(data, rows), a1, c1);

  for (int j : {1, 2}) {
    const auto sub = first_action_rows(data, rows, j);
    Eigen::VectorXi cont(static_cast<Eigen::Index>(sub.size()));
    int n_cont = 0;
    for (std::size_t k = 0; k < sub.size(); ++k) {
      const int c = data[sub[k]].path.s2 == other_test(j) ? 1 : 0;
      cont[static_cast<Eigen::Index>(k)] = c;
      n_cont += c;
    }
    const std::string name = "pi_" + std::to_string(other_test(j)) + "|" + std::to_string(j);
    if (n_cont == 0) {
      throw InsufficientSupport("no record continues from test " + std::to_string(j) + " to test " +
                                std::to_string(other_test(j)) + " in the training sample (needed for " +
                                name + ")");
    }
    if (n_cont == static_cast<int>(sub.size())) {
      throw InsufficientSupport("no record stops after test " + std::to_string(j) +
                                " in the training sample (needed for " + name + ")");
    }
    LearnerConfig c2 = stage2;
    c2.kind = LearnerKind::logistic;
    c2.num_classes = 2;
    models.stage2[static_cast<std::size_t>(j - 1)] = fit_classifier(stage2_design(data, sub, j), cont, c2);
  }
  return models;
}

void evaluate_propensities(const Dataset& data, const PropensityModels& models,
                           std::span<const std::size_t> rows, PropensityValues& out) {
  if (out.stage1.size() != data.size()) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    out.stage1.assign(data.size(), {nan, nan, nan});
    out.stage2.assign(data.size(), nan);
  }
  if (rows.empty()) return;
  const Matrix P = models.stage1.predict_proba(baseline_design(data, rows));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (int a = 0; a < 3; ++a) out.stage1[rows[k]][static_cast<std::size_t>(a)] = P(static_cast<Eigen::Index>(k), a);
  }
  for (int j : {1, 2}) {
    const auto sub = first_action_rows(data, rows, j);
    if (sub.empty()) continue;
    const Vector p = models.stage2[static_cast<std::size_t>(j - 1)].predict(stage2_design(data, sub, j));
    for (std::size_t k = 0; k < sub.size(); ++k) out.stage2[sub[k]] = p[static_cast<Eigen::Index>(k)];
  }
}

std::pair<double, double> clip_rates(const Dataset& data, const PropensityValues& values, double eps) {
  std::size_t n1 = 0, c1 = 0, n2 = 0, c2 = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int j : {1, 2}) {
      const double p = values.stage1[i][static_cast<std::size_t>(j)];
      ++n1;
      c1 += (p < eps || p > 1.0 - eps) ? 1 : 0;
    }
    if (data[i].path.s1 != 0) {
      const double p = values.stage2[i];
      ++n2;
      c2 += (p < eps || p > 1.0 - eps) ? 1 : 0;
    }
  }
  return {n1 ? static_cast<double>(c1) / static_cast<double>(n1) : 0.0,
          n2 ? static_cast<double>(c2) / static_cast<double>(n2) : 0.0};
}

PropensitySet fit_propensities(const Dataset& data, const FoldAssignment& folds, const LearnerConfig& stage1,
                               const LearnerConfig& stage2, double clip, int jobs) {
  if (folds.size() != data.size()) throw DimMismatch("fold assignment does not match the dataset");
  PropensitySet set;
  set.clip = clip;
  set.per_fold.resize(static_cast<std::size_t>(folds.K()));
  parallel_for(static_cast<std::size_t>(folds.K()), jobs, [&](std::size_t k) {
    const auto train = folds.training(static_cast<int>(k));
    try {
      set.per_fold[k] = fit_propensity_models(data, train, stage1, stage2);
    } catch (const InsufficientSupport& e) {
      throw InsufficientSupport("fold " + std::to_string(k) + ": " + e.what());
    }
  });
  for (int k = 0; k < folds.K(); ++k) {
    evaluate_propensities(data, set.per_fold[static_cast<std::size_t>(k)], folds.in_fold(k), set.out_of_fold);
  }
  std::tie(set.stage1_clip_rate, set.stage2_clip_rate) = clip_rates(data, set.out_of_fold, clip);
  return set;
}

// ---------------------------------------------------------------------------
// Auxiliary contrasts
// ---------------------------------------------------------------------------

FittedModel fit_stage2_aux(const Dataset& data, const LossTable& losses, std::span<const std::size_t> rows,
                           int j, const LearnerConfig& config) {
  const auto sub = ordered_path_rows(data, rows, j);
  if (sub.empty()) {
    throw InsufficientSupport("no record follows the ordered path (" + std::to_string(j) + "," +
                              std::to_string(other_test(j)) + ")");
  }
  const InformationState sj = single_test_state(j);
  Vector t(static_cast<Eigen::Index>(sub.size()));
  for (std::size_t k = 0; k < sub.size(); ++k) {
    assert(data[sub[k]].path.s1 == j && data[sub[k]].path.s2 == other_test(j));
    t[static_cast<Eigen::Index>(k)] = losses.at(sub[k], InformationState::S12) - losses.at(sub[k], sj);
  }
  return fit_regressor(stage2_design(data, sub, j), t, config);
}

FittedModel fit_stage1_aux(const Dataset& data, const std::vector<double>& labels,
                           std::span<const std::size_t> rows, int j, const LearnerConfig& config) {
  const auto sub = first_action_rows(data, rows, j);
  if (sub.empty()) {
    throw InsufficientSupport("no record starts with test " + std::to_string(j));
  }
  Vector t(static_cast<Eigen::Index>(sub.size()));
  for (std::size_t k = 0; k < sub.size(); ++k) t[static_cast<Eigen::Index>(k)] = labels.at(sub[k]);
  return fit_regressor(baseline_design(data, sub), t, config);
}

AuxContrastSet fit_stage2_aux_contrasts(const Dataset& data, const FoldAssignment& folds,
                                        const LossTable& losses, const LearnerConfig& config, int jobs) {
  AuxContrastSet set;
  const auto K = static_cast<std::size_t>(folds.K());
  for (int j : {1, 2}) {
    set.stage2_per_fold[static_cast<std::size_t>(j - 1)].resize(K);
    set.stage2_training_rows[static_cast<std::size_t>(j - 1)].resize(K);
  }
  parallel_for(K * 2, jobs, [&](std::size_t task) {
    const std::size_t k = task / 2;
    const int j = static_cast<int>(task % 2) + 1;
    const auto train = folds.training(static_cast<int>(k));
    try {
      set.stage2_per_fold[static_cast<std::size_t>(j - 1)][k] = fit_stage2_aux(data, losses, train, j, config);
    } catch (const InsufficientSupport& e) {
      throw InsufficientSupport("fold " + std::to_string(k) + ": " + e.what());
    }
    set.stage2_training_rows[static_cast<std::size_t>(j - 1)][k] = ordered_path_rows(data, train, j);
  });
  return set;
}

}  // namespace costq
