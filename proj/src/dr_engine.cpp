#include "costq/dr_engine.hpp"

#include "costq/loss.hpp"
#include "costq/parallel.hpp"
#include "costq/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <limits>

namespace costq {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <typename Fn>
auto with_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const InsufficientSupport& e) {
    throw InsufficientSupport(stage + ": " + e.what());
  } catch (const TooFewRecords& e) {
    throw TooFewRecords(stage + ": " + e.what());
  } catch (const EmptyData& e) {
    throw EmptyData(stage + ": " + e.what());
  } catch (const DegenerateDesign& e) {
    throw DegenerateDesign(stage + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Scalar building blocks
// ---------------------------------------------------------------------------

double pseudo_outcome(double prediction, double weight, double label) {
  if (weight == 0.0) return prediction;
  return prediction + weight * (label - prediction);
}

double pseudo_outcome_stage2(const Record& record, int j, double aux, double pi, double e12, double ej) {
  if (record.path.s1 != j) {
    throw WrongStage("stage-2 pseudo-outcome for test " + std::to_string(j) + " requested for a record with S1 = " +
                     std::to_string(record.path.s1));
  }
  const double w = record.path.s2 == other_test(j) ? 1.0 / pi : 0.0;
  return pseudo_outcome(aux, w, w == 0.0 ? 0.0 : e12 - ej);
}

double pseudo_outcome_stage1(const Record& record, int j, double aux, double pi, double qtilde, double e0) {
  const double w = record.path.s1 == j ? 1.0 / pi : 0.0;
  return pseudo_outcome(aux, w, w == 0.0 ? 0.0 : qtilde - e0);
}

int rule_stage2(double contrast, int j) { return contrast < 0.0 ? other_test(j) : 0; }

int rule_stage2(const FittedModel& contrast, const Vector& xj, int j) {
  return rule_stage2(contrast.predict_one(xj), j);
}

int rule_stage0(double contrast1, double contrast2, const CostSchedule& costs) {
  if (contrast1 >= 0.0 && contrast2 >= 0.0) return 0;
  if (contrast1 < contrast2) return 1;
  if (contrast2 < contrast1) return 2;
  return costs.cheaper_test();
}

int rule_stage0(const FittedModel& contrast1, const FittedModel& contrast2, const Vector& x0,
                const CostSchedule& costs) {
  return rule_stage0(contrast1.predict_one(x0), contrast2.predict_one(x0), costs);
}

double continuation_value(double ej, double contrast) { return ej + std::min(0.0, contrast); }

double continuation_value(const Record& record, int j, double ej, const FittedModel& contrast) {
  if (!record.block(j)) {
    throw MissingBlock("continuation value after test " + std::to_string(j) + " needs X_" + std::to_string(j));
  }
  return continuation_value(ej, contrast.predict_one(features_at_state(record, single_test_state(j))));
}

FittedModel fit_dr_contrast_stage2(const Dataset& data, std::span<const std::size_t> rows,
                                   const std::vector<double>& phi, int j, const LearnerConfig& config) {
  const auto sub = first_action_rows(data, rows, j);
  if (sub.empty()) throw InsufficientSupport("no record starts with test " + std::to_string(j));
  Vector t(static_cast<Eigen::Index>(sub.size()));
  for (std::size_t k = 0; k < sub.size(); ++k) {
    assert(data[sub[k]].path.s1 == j);
    t[static_cast<Eigen::Index>(k)] = phi.at(sub[k]);
  }
  return fit_regressor(stage2_design(data, sub, j), t, config);
}

FittedModel fit_dr_contrast_stage1(const Dataset& data, std::span<const std::size_t> rows,
                                   const std::vector<double>& phi, const LearnerConfig& config) {
  if (rows.empty()) throw EmptyData("no records for the first-stage contrast");
  Vector t(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) t[static_cast<Eigen::Index>(k)] = phi.at(rows[k]);
  return fit_regressor(baseline_design(data, rows), t, config);
}

double estimate_policy_value(std::span<const double> e0, std::span<const double> phi1,
                             std::span<const double> phi2, std::span<const int> d0) {
  if (e0.size() != phi1.size() || e0.size() != phi2.size() || e0.size() != d0.size()) {
    throw DimMismatch("value estimate inputs differ in length");
  }
  std::vector<double> terms(e0.size());
  for (std::size_t i = 0; i < e0.size(); ++i) {
    terms[i] = e0[i];
    if (d0[i] == 1) terms[i] += phi1[i];
    if (d0[i] == 2) terms[i] += phi2[i];
  }
  return pairwise_mean(terms);
}

// ---------------------------------------------------------------------------
// ContrastPolicy
// ---------------------------------------------------------------------------

ContrastPolicy::ContrastPolicy(std::string method, BlockDims dims, OutcomeKind outcome, CostSchedule costs,
                               double clip, CoreModels core, std::array<FittedModel, 2> stage2,
                               std::array<FittedModel, 2> stage1, TrainingInfo training)
    : method_(std::move(method)),
      dims_(dims),
      outcome_(outcome),
      costs_(costs),
      clip_(clip),
      core_(std::move(core)),
      stage2_(std::move(stage2)),
      stage1_(std::move(stage1)),
      training_(std::move(training)) {
  for (int j : {1, 2}) {
    if (stage2_model(j).input_dim() != dims_.p0 + dims_.of(j)) {
      throw DimMismatch("stage-2 contrast after test " + std::to_string(j) + " has the wrong input dimension");
    }
    if (stage1_model(j).input_dim() != dims_.p0) {
      throw DimMismatch("stage-1 contrast for test " + std::to_string(j) + " has the wrong input dimension");
    }
  }
}

double ContrastPolicy::contrast_stage2(int j, const Vector& xj) const {
  if (j != 1 && j != 2) throw std::out_of_range("test index must be 1 or 2");
  if (xj.size() != dims_.p0 + dims_.of(j)) {
    throw DimMismatch("expected " + std::to_string(dims_.p0 + dims_.of(j)) + " features after test " +
                      std::to_string(j) + ", got " + std::to_string(xj.size()));
  }
  return stage2_model(j).predict_one(xj);
}

double ContrastPolicy::contrast_stage1(int j, const Vector& x0) const {
  if (j != 1 && j != 2) throw std::out_of_range("test index must be 1 or 2");
  if (x0.size() != dims_.p0) {
    throw DimMismatch("expected " + std::to_string(dims_.p0) + " baseline features, got " +
                      std::to_string(x0.size()));
  }
  return stage1_model(j).predict_one(x0);
}

int ContrastPolicy::decide0(const Vector& x0) const {
  return rule_stage0(contrast_stage1(1, x0), contrast_stage1(2, x0), costs_);
}

int ContrastPolicy::decide_stage2(int j, const Vector& xj) const { return rule_stage2(contrast_stage2(j, xj), j); }

double ContrastPolicy::predict(InformationState s, const Vector& features) const {
  if (features.size() != dims_.at_state(s)) {
    throw DimMismatch("expected " + std::to_string(dims_.at_state(s)) + " features at state " +
                      std::string(to_string(s)));
  }
  return core_.predict_one(s, features);
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

LearnerConfig default_core_learner() {
  LearnerConfig c;
  c.kind = LearnerKind::logistic;
  c.degree = 2;
  c.ridge = 1e-2;
  return c;
}

LearnerConfig default_propensity_learner(int num_classes) {
  LearnerConfig c;
  c.kind = num_classes > 2 ? LearnerKind::softmax : LearnerKind::logistic;
  c.num_classes = num_classes;
  c.degree = 2;
  c.ridge = 1e-4;
  return c;
}

LearnerConfig default_contrast_learner() {
  LearnerConfig c;
  c.kind = LearnerKind::linear;
  c.degree = 2;
  c.ridge = 3e-1;
  return c;
}

void CostqConfig::validate() const {
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (!(clip > 0.0 && clip < 0.5)) throw ConfigError("propensity clip must lie in (0, 0.5)");
  core.validate();
  propensity_stage1.validate();
  propensity_stage2.validate();
  aux_contrast.validate();
  dr_contrast.validate();
  if (aux_contrast.kind != LearnerKind::linear && aux_contrast.kind != LearnerKind::kernel) {
    throw ConfigError("auxiliary contrasts need a regression learner");
  }
  if (dr_contrast.kind != LearnerKind::linear && dr_contrast.kind != LearnerKind::kernel) {
    throw ConfigError("DR contrasts need a regression learner");
  }
  if (propensity_stage1.kind != LearnerKind::softmax || propensity_stage1.num_classes != 3) {
    throw ConfigError("first-stage propensity learner must be softmax with 3 classes");
  }
  if (propensity_stage2.kind != LearnerKind::logistic) {
    throw ConfigError("second-stage propensity learner must be logistic");
  }
}

nlohmann::json CostqConfig::to_json() const {
  return {{"folds", folds},
          {"clip", clip},
          {"seed", seed},
          {"nested_stage2", nested_stage2},
          {"learners",
           {{"core", costq::to_json(core)},
            {"propensity_stage1", costq::to_json(propensity_stage1)},
            {"propensity_stage2", costq::to_json(propensity_stage2)},
            {"aux_contrast", costq::to_json(aux_contrast)},
            {"dr_contrast", costq::to_json(dr_contrast)}}}};
}

std::string CostqConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

namespace {

nlohmann::json nan_safe(const std::vector<double>& v) {
  nlohmann::json out = nlohmann::json::array();
  for (double x : v) out.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
  return out;
}

nlohmann::json histogram(const std::vector<double>& values, int bins) {
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    const int b = std::clamp(static_cast<int>(v * bins), 0, bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  return counts;
}

}  // namespace

nlohmann::json CostqDiagnostics::to_json() const {
  nlohmann::json j;
  j["n"] = losses.E.size();
  j["folds"] = folds.folds();
  j["clip_rate"] = {{"stage1", stage1_clip_rate}, {"stage2", stage2_clip_rate}};
  j["value_estimate"] = value_estimate;
  j["heldout_propensity_loss"] = {{"stage1", stage1_heldout_loss}, {"stage2", stage2_heldout_loss}};

  nlohmann::json hist = nlohmann::json::array();
  for (int k = 0; k < folds.K(); ++k) {
    std::vector<double> p1, p2, pc;
    for (std::size_t i = 0; i < propensities.stage1.size(); ++i) {
      if (folds.fold_of(i) != k) continue;
      p1.push_back(propensities.stage1[i][1]);
      p2.push_back(propensities.stage1[i][2]);
      pc.push_back(propensities.stage2[i]);
    }
    hist.push_back({{"fold", k},
                    {"pi_1|0", histogram(p1, 20)},
                    {"pi_2|0", histogram(p2, 20)},
                    {"pi_continue", histogram(pc, 20)}});
  }
  j["propensity_histograms"] = hist;
  j["pseudo_outcomes"] = {{"stage2", nan_safe(pseudo.stage2)},
                          {"stage2_weight", nan_safe(pseudo.stage2_weight)},
                          {"qtilde", nan_safe(pseudo.qtilde)},
                          {"stage1_test1", nan_safe(pseudo.stage1[0])},
                          {"stage1_test2", nan_safe(pseudo.stage1[1])},
                          {"stage1_weight_test1", nan_safe(pseudo.stage1_weight[0])},
                          {"stage1_weight_test2", nan_safe(pseudo.stage1_weight[1])}};
  j["fold_d0"] = fold_d0;
  nlohmann::json tr = nlohmann::json::array();
  for (const auto& t : traces) tr.push_back({{"name", t.name}, {"fold", t.fold}, {"rows", t.rows.size()}});
  j["nuisance_fits"] = tr;
  j["out_of_fold_verified"] = verify_out_of_fold(*this);
  return j;
}

bool verify_out_of_fold(const CostqDiagnostics& d) {
  for (const auto& t : d.traces) {
    for (std::size_t i : t.rows) {
      if (d.folds.fold_of(i) == t.fold) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

namespace {

// Everything a fold's nuisances produce, evaluated at every record that needs it.
struct FoldNuisance {
  std::vector<std::array<double, 3>> pi1;  // clipped
  std::vector<double> pi2;                 // clipped, S1 != 0 rows
  std::vector<double> aux2;                // S1 != 0 rows
};

std::vector<std::array<double, 3>> clipped(const std::vector<std::array<double, 3>>& v, double eps) {
  std::vector<std::array<double, 3>> out = v;
  for (auto& a : out) {
    for (double& p : a) p = std::isfinite(p) ? clip_propensity(p, eps) : p;
  }
  return out;
}

std::vector<double> clipped(const std::vector<double>& v, double eps) {
  std::vector<double> out = v;
  for (double& p : out) p = std::isfinite(p) ? clip_propensity(p, eps) : p;
  return out;
}

std::vector<double> predict_stage2_at(const Dataset& data, std::span<const std::size_t> rows,
                                      const std::array<const FittedModel*, 2>& models,
                                      const std::function<double(int, const Vector&)>& injected) {
  std::vector<double> out(data.size(), kNaN);
  for (int j : {1, 2}) {
    const auto sub = first_action_rows(data, rows, j);
    if (sub.empty()) continue;
    const Matrix X = stage2_design(data, sub, j);
    if (injected) {
      for (std::size_t k = 0; k < sub.size(); ++k) out[sub[k]] = injected(j, X.row(static_cast<Eigen::Index>(k)).transpose());
    } else {
      const Vector p = models[static_cast<std::size_t>(j - 1)]->predict(X);
      for (std::size_t k = 0; k < sub.size(); ++k) out[sub[k]] = p[static_cast<Eigen::Index>(k)];
    }
  }
  return out;
}

std::vector<double> predict_baseline_at(const Dataset& data, std::span<const std::size_t> rows, int j,
                                        const FittedModel* model,
                                        const std::function<double(int, const Vector&)>& injected) {
  std::vector<double> out(data.size(), kNaN);
  if (rows.empty()) return out;
  const Matrix X = baseline_design(data, rows);
  if (injected) {
    for (std::size_t k = 0; k < rows.size(); ++k) out[rows[k]] = injected(j, X.row(static_cast<Eigen::Index>(k)).transpose());
  } else {
    const Vector p = model->predict(X);
    for (std::size_t k = 0; k < rows.size(); ++k) out[rows[k]] = p[static_cast<Eigen::Index>(k)];
  }
  return out;
}

}  // namespace

CostqFit learn_policy(const Dataset& data, const CostSchedule& costs, const CostqConfig& config,
                      const NuisanceInjection& inj) {
  config.validate();
  const std::size_t n = data.size();
  const int K = config.folds;
  const auto Ku = static_cast<std::size_t>(K);
  const int jobs = config.jobs;
  if (inj.stage1_propensity && inj.stage1_propensity->size() != n) {
    throw DimMismatch("injected first-stage propensities do not match the dataset");
  }
  if (inj.stage2_propensity && inj.stage2_propensity->size() != n) {
    throw DimMismatch("injected second-stage propensities do not match the dataset");
  }

  CostqDiagnostics diag;
  diag.folds = with_stage("folds", [&] { return make_folds(data, K, config.seed); });
  const FoldAssignment& folds = diag.folds;
  std::vector<std::vector<std::size_t>> train(Ku), held(Ku);
  for (int k = 0; k < K; ++k) {
    train[static_cast<std::size_t>(k)] = folds.training(k);
    held[static_cast<std::size_t>(k)] = folds.in_fold(k);
  }
  const std::vector<std::size_t> everyone = all_rows(data);

  // Core models and cost-augmented losses.
  CoreModels core = with_stage("core models", [&] { return fit_core_models(data, config.core); });
  diag.losses = compute_losses(data, inj.core ? *inj.core : static_cast<const CorePredictor&>(core), costs);
  const LossTable& L = diag.losses;
  auto E = [&](std::size_t i, InformationState s) { return L.at(i, s); };

  // Propensity and stage-2 auxiliary models per fold, evaluated at every record.
  const bool fit_props = !inj.stage1_propensity || !inj.stage2_propensity;
  std::vector<PropensityModels> prop_models(Ku);
  std::vector<PropensityValues> prop_values(Ku);
  std::array<std::vector<FittedModel>, 2> aux2_models{std::vector<FittedModel>(Ku), std::vector<FittedModel>(Ku)};
  std::vector<FoldNuisance> fold_nuis(Ku);

  with_stage("nuisance fits", [&] {
    parallel_for(Ku, jobs, [&](std::size_t k) {
      try {
        if (fit_props) {
          prop_models[k] = fit_propensity_models(data, train[k], config.propensity_stage1, config.propensity_stage2);
          evaluate_propensities(data, prop_models[k], everyone, prop_values[k]);
        }
        if (!inj.stage2_aux) {
          for (int j : {1, 2}) {
            aux2_models[static_cast<std::size_t>(j - 1)][k] = fit_stage2_aux(data, L, train[k], j, config.aux_contrast);
          }
        }
      } catch (const InsufficientSupport& e) {
        throw InsufficientSupport("fold " + std::to_string(k) + ": " + e.what());
      }
      FoldNuisance& fn = fold_nuis[k];
      fn.pi1 = clipped(inj.stage1_propensity ? *inj.stage1_propensity : prop_values[k].stage1, config.clip);
      fn.pi2 = clipped(inj.stage2_propensity ? *inj.stage2_propensity : prop_values[k].stage2, config.clip);
      fn.aux2 = predict_stage2_at(data, everyone, {&aux2_models[0][k], &aux2_models[1][k]}, inj.stage2_aux);
    });
    return 0;
  });
  for (int k = 0; k < K; ++k) {
    if (fit_props) diag.traces.push_back({"propensity", k, train[static_cast<std::size_t>(k)]});
    if (!inj.stage2_aux) {
      for (int j : {1, 2}) {
        diag.traces.push_back({"aux_stage2_test" + std::to_string(j), k,
                               ordered_path_rows(data, train[static_cast<std::size_t>(k)], j)});
      }
    }
  }

  // Out-of-fold propensities for diagnostics.
  diag.propensities.stage1.assign(n, {kNaN, kNaN, kNaN});
  diag.propensities.stage2.assign(n, kNaN);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(folds.fold_of(i));
    diag.propensities.stage1[i] = inj.stage1_propensity ? (*inj.stage1_propensity)[i] : prop_values[k].stage1[i];
    diag.propensities.stage2[i] = data[i].path.s1 == 0
                                      ? kNaN
                                      : (inj.stage2_propensity ? (*inj.stage2_propensity)[i] : prop_values[k].stage2[i]);
  }
  std::tie(diag.stage1_clip_rate, diag.stage2_clip_rate) = clip_rates(data, diag.propensities, config.clip);
  if (fit_props) {
    for (int k = 0; k < K; ++k) {
      std::vector<double> l1, l2;
      for (std::size_t i : held[static_cast<std::size_t>(k)]) {
        const Record& r = data[i];
        l1.push_back(-std::log(std::max(diag.propensities.stage1[i][static_cast<std::size_t>(r.path.s1)], 1e-300)));
        if (r.path.s1 != 0) {
          const double p = diag.propensities.stage2[i];
          l2.push_back(prediction_loss(r.path.s2 != 0 ? 1.0 : 0.0, p));
        }
      }
      diag.stage1_heldout_loss.push_back(pairwise_mean(l1));
      diag.stage2_heldout_loss.push_back(l2.empty() ? 0.0 : pairwise_mean(l2));
    }
  }

  auto phi2_at = [&](std::size_t i, double aux, double pi) {
    const int j = data[i].path.s1;
    return pseudo_outcome_stage2(data[i], j, aux, pi, E(i, InformationState::S12), E(i, single_test_state(j)));
  };

  // Fold-specific stage-2 DR contrasts, fitted on D minus fold k only.
  std::array<std::vector<FittedModel>, 2> fold_dr2{std::vector<FittedModel>(Ku), std::vector<FittedModel>(Ku)};
  std::vector<std::vector<double>> fold_contrast(Ku);
  std::vector<std::vector<NuisanceTrace>> nested_traces(Ku);
  with_stage("fold-specific second-stage rules", [&] {
    parallel_for(Ku, jobs, [&](std::size_t k) {
      std::vector<double> phi(n, kNaN);
      if (!config.nested_stage2) {
        for (std::size_t i : train[k]) {
          if (data[i].path.s1 != 0) phi[i] = phi2_at(i, fold_nuis[k].aux2[i], fold_nuis[k].pi2[i]);
        }
      } else {
        std::vector<int> strata;
        for (std::size_t i : train[k]) strata.push_back(data[i].path.s1);
        const FoldAssignment halves = make_folds(strata, 2, derive_seed(config.seed, {0x5E57ED, k}));
        for (int h = 0; h < 2; ++h) {
          std::vector<std::size_t> fit_rows, apply_rows;
          for (std::size_t a = 0; a < train[k].size(); ++a) {
            (halves.fold_of(a) == h ? apply_rows : fit_rows).push_back(train[k][a]);
          }
          std::vector<double> pi2(n, kNaN);
          if (inj.stage2_propensity) {
            pi2 = clipped(*inj.stage2_propensity, config.clip);
          } else {
            PropensityModels pm = fit_propensity_models(data, fit_rows, config.propensity_stage1, config.propensity_stage2);
            PropensityValues pv;
            evaluate_propensities(data, pm, apply_rows, pv);
            pi2 = clipped(pv.stage2, config.clip);
            nested_traces[k].push_back({"nested_propensity", static_cast<int>(k), fit_rows});
          }
          std::array<FittedModel, 2> am;
          if (!inj.stage2_aux) {
            for (int j : {1, 2}) {
              am[static_cast<std::size_t>(j - 1)] = fit_stage2_aux(data, L, fit_rows, j, config.aux_contrast);
              nested_traces[k].push_back({"nested_aux_stage2_test" + std::to_string(j), static_cast<int>(k),
                                          ordered_path_rows(data, fit_rows, j)});
            }
          }
          const auto aux = predict_stage2_at(data, apply_rows, {&am[0], &am[1]}, inj.stage2_aux);
          for (std::size_t i : apply_rows) {
            if (data[i].path.s1 != 0) phi[i] = phi2_at(i, aux[i], pi2[i]);
          }
        }
      }
      for (int j : {1, 2}) {
        fold_dr2[static_cast<std::size_t>(j - 1)][k] = fit_dr_contrast_stage2(data, train[k], phi, j, config.dr_contrast);
      }
      fold_contrast[k] = predict_stage2_at(data, everyone, {&fold_dr2[0][k], &fold_dr2[1][k]}, nullptr);
    });
    return 0;
  });
  for (int k = 0; k < K; ++k) {
    for (auto& t : nested_traces[static_cast<std::size_t>(k)]) diag.traces.push_back(std::move(t));
    for (int j : {1, 2}) {
      diag.traces.push_back({"dr_stage2_test" + std::to_string(j) + "_fold_rule", k,
                             first_action_rows(data, train[static_cast<std::size_t>(k)], j)});
    }
  }

  // Q~ under each fold's rule, for every record whose first test is observed.
  auto qtilde = [&](std::size_t k, std::size_t i) {
    const int j = data[i].path.s1;
    return continuation_value(E(i, single_test_state(j)), fold_contrast[k][i]);
  };

  // Out-of-fold stage-2 pseudo-outcomes and the final stage-2 contrasts.
  PseudoOutcomeTable& pt = diag.pseudo;
  pt.stage2.assign(n, kNaN);
  pt.stage2_weight.assign(n, kNaN);
  pt.stage2_aux.assign(n, kNaN);
  pt.fold_contrast_stage2.assign(n, kNaN);
  pt.qtilde.assign(n, kNaN);
  for (std::size_t i = 0; i < n; ++i) {
    const Record& r = data[i];
    if (r.path.s1 == 0) continue;
    const auto k = static_cast<std::size_t>(folds.fold_of(i));
    const double aux = fold_nuis[k].aux2[i];
    const double pi = fold_nuis[k].pi2[i];
    pt.stage2_aux[i] = aux;
    pt.stage2_weight[i] = r.path.s2 != 0 ? 1.0 / pi : 0.0;
    pt.stage2[i] = phi2_at(i, aux, pi);
    pt.fold_contrast_stage2[i] = fold_contrast[k][i];
    pt.qtilde[i] = qtilde(k, i);
  }
  std::array<FittedModel, 2> final_stage2;
  with_stage("second-stage DR contrasts", [&] {
    for (int j : {1, 2}) {
      final_stage2[static_cast<std::size_t>(j - 1)] = fit_dr_contrast_stage2(data, everyone, pt.stage2, j, config.dr_contrast);
    }
    return 0;
  });

  // Stage-1 auxiliary contrasts and pseudo-outcomes, per fold.
  std::array<std::vector<std::vector<double>>, 2> aux1_values;
  std::array<std::vector<std::vector<double>>, 2> fold_phi1;  // in-sample on D minus fold k
  for (int j : {1, 2}) {
    aux1_values[static_cast<std::size_t>(j - 1)].resize(Ku);
    fold_phi1[static_cast<std::size_t>(j - 1)].assign(Ku, std::vector<double>(n, kNaN));
    pt.stage1[static_cast<std::size_t>(j - 1)].assign(n, kNaN);
    pt.stage1_weight[static_cast<std::size_t>(j - 1)].assign(n, kNaN);
    pt.stage1_aux[static_cast<std::size_t>(j - 1)].assign(n, kNaN);
  }
  with_stage("first-stage auxiliary contrasts", [&] {
    parallel_for(Ku * 2, jobs, [&](std::size_t task) {
      const std::size_t k = task / 2;
      const int j = static_cast<int>(task % 2) + 1;
      const auto ju = static_cast<std::size_t>(j - 1);
      FittedModel model;
      if (!inj.stage1_aux) {
        std::vector<double> labels(n, kNaN);
        for (std::size_t i : train[k]) {
          if (data[i].path.s1 == j) labels[i] = qtilde(k, i) - E(i, InformationState::S0);
        }
        try {
          model = fit_stage1_aux(data, labels, train[k], j, config.aux_contrast);
        } catch (const InsufficientSupport& e) {
          throw InsufficientSupport("fold " + std::to_string(k) + ": " + e.what());
        }
      }
      aux1_values[ju][k] = predict_baseline_at(data, everyone, j, &model, inj.stage1_aux);
      for (std::size_t i = 0; i < n; ++i) {
        const double qt = data[i].path.s1 == j ? qtilde(k, i) : kNaN;
        const double phi = pseudo_outcome_stage1(data[i], j, aux1_values[ju][k][i], fold_nuis[k].pi1[i][ju], qt,
                                                 E(i, InformationState::S0));
        if (folds.fold_of(i) == static_cast<int>(k)) {
          pt.stage1[ju][i] = phi;
          pt.stage1_aux[ju][i] = aux1_values[ju][k][i];
          pt.stage1_weight[ju][i] = data[i].path.s1 == j ? 1.0 / fold_nuis[k].pi1[i][ju] : 0.0;
        } else {
          fold_phi1[ju][k][i] = phi;
        }
      }
    });
    return 0;
  });
  if (!inj.stage1_aux) {
    for (int k = 0; k < K; ++k) {
      for (int j : {1, 2}) {
        diag.traces.push_back({"aux_stage1_test" + std::to_string(j), k,
                               first_action_rows(data, train[static_cast<std::size_t>(k)], j)});
      }
    }
  }

  // Final stage-1 contrasts pool every record.
  std::array<FittedModel, 2> final_stage1;
  with_stage("first-stage DR contrasts", [&] {
    for (int j : {1, 2}) {
      final_stage1[static_cast<std::size_t>(j - 1)] =
          fit_dr_contrast_stage1(data, everyone, pt.stage1[static_cast<std::size_t>(j - 1)], config.dr_contrast);
    }
    return 0;
  });

  // Fold-specific first-stage rules and the value estimate.
  diag.fold_d0.assign(n, 0);
  with_stage("value estimate", [&] {
    parallel_for(Ku, jobs, [&](std::size_t k) {
      std::array<FittedModel, 2> m;
      for (int j : {1, 2}) {
        m[static_cast<std::size_t>(j - 1)] =
            fit_dr_contrast_stage1(data, train[k], fold_phi1[static_cast<std::size_t>(j - 1)][k], config.dr_contrast);
      }
      const Matrix X0 = baseline_design(data, held[k]);
      const Vector c1 = m[0].predict(X0);
      const Vector c2 = m[1].predict(X0);
      for (std::size_t a = 0; a < held[k].size(); ++a) {
        const auto ai = static_cast<Eigen::Index>(a);
        diag.fold_d0[held[k][a]] = rule_stage0(c1[ai], c2[ai], costs);
      }
    });
    return 0;
  });
  for (int k = 0; k < K; ++k) {
    diag.traces.push_back({"dr_stage1_fold_rule", k, train[static_cast<std::size_t>(k)]});
  }
  std::vector<double> e0(n);
  for (std::size_t i = 0; i < n; ++i) e0[i] = E(i, InformationState::S0);
  diag.value_estimate = estimate_policy_value(e0, pt.stage1[0], pt.stage1[1], diag.fold_d0);
  diag.fold_stage2_contrasts = std::move(fold_dr2);

  TrainingInfo info{n, K, config.seed, config.hash()};
  ContrastPolicy policy("costq", data.dims(), data.outcome(), costs, config.clip, std::move(core),
                        std::move(final_stage2), std::move(final_stage1), std::move(info));
  spdlog::debug("costq fit: n={} K={} value estimate {:.6f}", n, K, diag.value_estimate);
  return CostqFit{std::move(policy), std::move(diag)};
}

}  // namespace costq
