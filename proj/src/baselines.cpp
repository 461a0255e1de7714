#include "costq/baselines.hpp"

#include <cmath>

namespace costq {

namespace {

void check_features(const BlockDims& dims, InformationState s, const Vector& features) {
  if (features.size() != dims.at_state(s)) {
    throw DimMismatch("expected " + std::to_string(dims.at_state(s)) + " features at state " +
                      std::string(to_string(s)) + ", got " + std::to_string(features.size()));
  }
}

void check_stage2(const BlockDims& dims, int j, const Vector& xj) {
  if (j != 1 && j != 2) throw std::out_of_range("test index must be 1 or 2");
  check_features(dims, single_test_state(j), xj);
}

TrainingInfo training_info(const Dataset& data, const CostqConfig& config, int K) {
  return {data.size(), K, config.seed, config.hash()};
}

std::vector<std::size_t> complete_rows(const Dataset& data) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].path.s2 != 0) rows.push_back(i);
  }
  return rows;
}

}  // namespace

std::string_view to_string(FixedRule rule) {
  return rule == FixedRule::always_stop ? "always_stop" : "always_test_all";
}

FixedRule fixed_rule_from_string(std::string_view name) {
  if (name == "always_stop") return FixedRule::always_stop;
  if (name == "always_test_all") return FixedRule::always_test_all;
  throw ConfigError("unknown fixed rule '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// FixedPolicy
// ---------------------------------------------------------------------------

FixedPolicy::FixedPolicy(FixedRule rule, BlockDims dims, OutcomeKind outcome, CostSchedule costs, CoreModels core,
                         TrainingInfo training)
    : rule_(rule),
      dims_(dims),
      outcome_(outcome),
      costs_(costs),
      core_(std::move(core)),
      training_(std::move(training)) {}

int FixedPolicy::decide0(const Vector& x0) const {
  check_features(dims_, InformationState::S0, x0);
  return rule_ == FixedRule::always_stop ? 0 : costs_.cheaper_test();
}

int FixedPolicy::decide_stage2(int j, const Vector& xj) const {
  check_stage2(dims_, j, xj);
  return rule_ == FixedRule::always_stop ? 0 : other_test(j);
}

double FixedPolicy::predict(InformationState s, const Vector& features) const {
  check_features(dims_, s, features);
  return core_.predict_one(s, features);
}

// ---------------------------------------------------------------------------
// OneTimePolicy
// ---------------------------------------------------------------------------

OneTimePolicy::OneTimePolicy(BlockDims dims, OutcomeKind outcome, CostSchedule costs, CoreModels core,
                             std::array<FittedModel, 4> state_loss, TrainingInfo training)
    : dims_(dims),
      outcome_(outcome),
      costs_(costs),
      core_(std::move(core)),
      state_loss_(std::move(state_loss)),
      training_(std::move(training)) {
  for (const auto& m : state_loss_) {
    if (m.input_dim() != dims_.p0) throw DimMismatch("state-loss models must take the baseline block");
  }
}

std::array<double, 4> OneTimePolicy::state_losses(const Vector& x0) const {
  check_features(dims_, InformationState::S0, x0);
  std::array<double, 4> out{};
  const double e0 = state_loss_model(InformationState::S0).predict_one(x0);
  for (auto s : kAllStates) {
    out[static_cast<std::size_t>(s)] = s == InformationState::S0 ? e0 : e0 + state_loss_model(s).predict_one(x0);
  }
  return out;
}

InformationState OneTimePolicy::target_state(const Vector& x0) const {
  const auto v = state_losses(x0);
  InformationState best = InformationState::S0;
  for (auto s : kAllStates) {
    const double a = v[static_cast<std::size_t>(s)];
    const double b = v[static_cast<std::size_t>(best)];
    if (a < b || (a == b && costs_.cumulative(s) < costs_.cumulative(best))) best = s;
  }
  return best;
}

int OneTimePolicy::decide0(const Vector& x0) const {
  switch (target_state(x0)) {
    case InformationState::S0: return 0;
    case InformationState::S1only: return 1;
    case InformationState::S2only: return 2;
    case InformationState::S12: return costs_.cheaper_test();
  }
  return 0;
}

int OneTimePolicy::decide_stage2(int j, const Vector& xj) const {
  check_stage2(dims_, j, xj);
  return target_state(xj.head(dims_.p0)) == InformationState::S12 ? other_test(j) : 0;
}

double OneTimePolicy::predict(InformationState s, const Vector& features) const {
  check_features(dims_, s, features);
  return core_.predict_one(s, features);
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

ContrastPolicy fit_only_complete(const Dataset& data, const CostSchedule& costs, const CostqConfig& config) {
  config.validate();
  const auto rows = complete_rows(data);
  if (rows.empty()) throw InsufficientSupport("only_complete: no record reached S12");

  std::array<FittedModel, 4> models;
  for (auto s : kAllStates) models[static_cast<std::size_t>(s)] = fit_outcome_model(data, rows, s, config.core);
  CoreModels core(std::move(models));
  const LossTable L = compute_losses(data, core, costs);

  const Matrix X0 = baseline_design(data, rows);
  std::array<FittedModel, 2> stage2;
  std::array<FittedModel, 2> stage1;
  for (int j : {1, 2}) {
    const Matrix Xj = stage2_design(data, rows, j);
    Vector t2(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      t2[static_cast<Eigen::Index>(k)] =
          L.at(rows[k], InformationState::S12) - L.at(rows[k], single_test_state(j));
    }
    FittedModel contrast = fit_regressor(Xj, t2, config.aux_contrast);
    const Vector d = contrast.predict(Xj);

    Vector t1(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto e = static_cast<Eigen::Index>(k);
      t1[e] = continuation_value(L.at(rows[k], single_test_state(j)), d[e]) - L.at(rows[k], InformationState::S0);
    }
    stage1[static_cast<std::size_t>(j - 1)] = fit_regressor(X0, t1, config.aux_contrast);
    stage2[static_cast<std::size_t>(j - 1)] = std::move(contrast);
  }
  return ContrastPolicy("only_complete", data.dims(), data.outcome(), costs, 0.0, std::move(core), std::move(stage2),
                        std::move(stage1), training_info(data, config, 0));
}

OneTimePolicy fit_one_time(const Dataset& data, const CostSchedule& costs, const CostqConfig& config) {
  config.validate();
  CoreModels core = fit_core_models(data, config.core);
  const LossTable L = compute_losses(data, core, costs);

  std::array<FittedModel, 4> state_loss;
  for (auto s : kAllStates) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isnan(L.at(i, s))) rows.push_back(i);
    }
    if (rows.empty()) {
      throw InsufficientSupport("one_time: no record observes state " + std::string(to_string(s)));
    }
    Vector t(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const double base = s == InformationState::S0 ? 0.0 : L.at(rows[k], InformationState::S0);
      t[static_cast<Eigen::Index>(k)] = L.at(rows[k], s) - base;
    }
    state_loss[static_cast<std::size_t>(s)] = fit_regressor(baseline_design(data, rows), t, config.dr_contrast);
  }
  return OneTimePolicy(data.dims(), data.outcome(), costs, std::move(core), std::move(state_loss),
                       training_info(data, config, 0));
}

FixedPolicy fit_fixed_policy(FixedRule rule, const Dataset& data, const CostSchedule& costs,
                             const CostqConfig& config) {
  config.validate();
  return FixedPolicy(rule, data.dims(), data.outcome(), costs, fit_core_models(data, config.core),
                     training_info(data, config, 0));
}

MethodFit fit_method(std::string_view method, const Dataset& data, const CostSchedule& costs,
                     const CostqConfig& config) {
  MethodFit out;
  if (method == "costq") {
    CostqFit fit = learn_policy(data, costs, config);
    out.diagnostics = fit.diagnostics.to_json();
    out.value_estimate = fit.diagnostics.value_estimate;
    out.policy = std::make_unique<ContrastPolicy>(std::move(fit.policy));
  } else if (method == "only_complete") {
    out.policy = std::make_unique<ContrastPolicy>(fit_only_complete(data, costs, config));
  } else if (method == "one_time") {
    out.policy = std::make_unique<OneTimePolicy>(fit_one_time(data, costs, config));
  } else if (method == "always_stop" || method == "always_test_all") {
    out.policy = std::make_unique<FixedPolicy>(fit_fixed_policy(fixed_rule_from_string(method), data, costs, config));
  } else {
    throw ConfigError("unknown method '" + std::string(method) + "'");
  }
  if (method != "costq") out.diagnostics = {{"n", data.size()}, {"method", method}};
  return out;
}

}  // namespace costq
