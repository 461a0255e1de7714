#include "costq/loss.hpp"

#include <algorithm>
#include <cmath>

namespace costq {

double prediction_loss(double y, double prediction, OutcomeKind kind) {
  if (kind == OutcomeKind::continuous) {
    const double r = y - prediction;
    return r * r;
  }
  const double p = std::clamp(prediction, kPredictionClamp, 1.0 - kPredictionClamp);
  return -(y * std::log(p) + (1.0 - y) * std::log1p(-p));
}

double cost_augmented_loss(double y, double prediction, InformationState state,
                           const CostSchedule& costs, OutcomeKind kind) {
  return prediction_loss(y, prediction, kind) + costs.cumulative(state);
}

double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kBlock = 32;
  if (values.size() <= kBlock) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double pairwise_mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return pairwise_sum(values) / static_cast<double>(values.size());
}

}  // namespace costq
