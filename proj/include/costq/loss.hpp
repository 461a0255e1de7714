#pragma once

#include "costq/types.hpp"

#include <span>

namespace costq {

/// Binary predictions are clamped to [kPredictionClamp, 1 - kPredictionClamp] before the log.
inline constexpr double kPredictionClamp = 1e-12;

/// Cross-entropy for binary outcomes, squared error for continuous ones.
double prediction_loss(double y, double prediction, OutcomeKind kind = OutcomeKind::binary);

/// prediction_loss + cumulative cost of `state`.
double cost_augmented_loss(double y, double prediction, InformationState state,
                           const CostSchedule& costs, OutcomeKind kind = OutcomeKind::binary);

/// Order-independent summation used for every loss average.
double pairwise_sum(std::span<const double> values);
double pairwise_mean(std::span<const double> values);

}  // namespace costq
