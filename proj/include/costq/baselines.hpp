#pragma once

#include "costq/dr_engine.hpp"
#include "costq/nuisance.hpp"
#include "costq/policy.hpp"

#include <array>
#include <memory>
#include <string>
#include <string_view>

namespace costq {

enum class FixedRule { always_stop, always_test_all };

std::string_view to_string(FixedRule rule);
FixedRule fixed_rule_from_string(std::string_view name);

/// Constant decisions. always_test_all takes the cheaper test first (test 1 on cost ties).
class FixedPolicy : public Policy {
 public:
  FixedPolicy(FixedRule rule, BlockDims dims, OutcomeKind outcome, CostSchedule costs, CoreModels core,
              TrainingInfo training);

  std::string method() const override { return std::string(to_string(rule_)); }
  const BlockDims& dims() const override { return dims_; }
  FixedRule rule() const noexcept { return rule_; }
  OutcomeKind outcome() const noexcept { return outcome_; }
  const CostSchedule& costs() const noexcept { return costs_; }
  const CoreModels& core() const noexcept { return core_; }
  const TrainingInfo& training() const noexcept { return training_; }

  int decide0(const Vector& x0) const override;
  int decide_stage2(int j, const Vector& xj) const override;
  double predict(InformationState s, const Vector& features) const override;

 private:
  FixedRule rule_;
  BlockDims dims_;
  OutcomeKind outcome_;
  CostSchedule costs_;
  CoreModels core_;
  TrainingInfo training_;
};

/// Static baseline rule: picks the terminal state with the smallest regressed
/// cost-augmented loss given x0 and commits to it. The S0 model predicts E_0; the model of
/// every other state predicts E_s - E_0 on the records observing s.
class OneTimePolicy : public Policy {
 public:
  OneTimePolicy(BlockDims dims, OutcomeKind outcome, CostSchedule costs, CoreModels core,
                std::array<FittedModel, 4> state_loss, TrainingInfo training);

  std::string method() const override { return "one_time"; }
  const BlockDims& dims() const override { return dims_; }
  OutcomeKind outcome() const noexcept { return outcome_; }
  const CostSchedule& costs() const noexcept { return costs_; }
  const CoreModels& core() const noexcept { return core_; }
  const TrainingInfo& training() const noexcept { return training_; }
  const FittedModel& state_loss_model(InformationState s) const { return state_loss_[static_cast<std::size_t>(s)]; }

  /// Predicted E_s given x0 for every state.
  std::array<double, 4> state_losses(const Vector& x0) const;
  /// argmin of state_losses; ties go to the cheaper state, then to the lower state index.
  InformationState target_state(const Vector& x0) const;

  int decide0(const Vector& x0) const override;
  int decide_stage2(int j, const Vector& xj) const override;
  double predict(InformationState s, const Vector& features) const override;

 private:
  BlockDims dims_;
  OutcomeKind outcome_;
  CostSchedule costs_;
  CoreModels core_;
  std::array<FittedModel, 4> state_loss_;
  TrainingInfo training_;
};

/// Complete-case backward recursion: core models, stage-2 and stage-1 contrasts are all
/// fit without weights on the records that reached S12. Contrasts use `config.aux_contrast`.
/// Throws InsufficientSupport when no record reached S12.
ContrastPolicy fit_only_complete(const Dataset& data, const CostSchedule& costs, const CostqConfig& config);

/// Regresses E_0 and the paired differences E_s - E_0 on x0 (with `config.dr_contrast`)
/// over the records where E_s is computable, using core models fit as in learn_policy.
OneTimePolicy fit_one_time(const Dataset& data, const CostSchedule& costs, const CostqConfig& config);

/// Fits the core models and wraps them in a constant rule.
FixedPolicy fit_fixed_policy(FixedRule rule, const Dataset& data, const CostSchedule& costs, const CostqConfig& config);

inline constexpr std::array<std::string_view, 5> kMethodNames = {"costq", "only_complete", "one_time", "always_stop",
                                                                 "always_test_all"};

struct MethodFit {
  std::unique_ptr<Policy> policy;
  nlohmann::json diagnostics;
  std::optional<double> value_estimate;
};

/// Dispatches on a method name from kMethodNames; unknown names raise ConfigError.
MethodFit fit_method(std::string_view method, const Dataset& data, const CostSchedule& costs,
                     const CostqConfig& config);

}  // namespace costq
