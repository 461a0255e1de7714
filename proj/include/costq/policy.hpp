#pragma once

#include "costq/types.hpp"

#include <string>

namespace costq {

/// Conditional outcome means m_s at each information state.
class CorePredictor {
 public:
  virtual ~CorePredictor() = default;
  /// Rows of X are features_at_state(record, s).
  virtual Vector predict(InformationState s, const Matrix& X) const = 0;
  double predict_one(InformationState s, const Vector& x) const;
};

/// A two-stage acquisition policy with per-state terminal predictions.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual std::string method() const = 0;
  virtual const BlockDims& dims() const = 0;

  /// First action from the baseline block: 0 stop, 1 or 2 acquire that test.
  virtual int decide0(const Vector& x0) const = 0;
  /// After acquiring test j, `xj` = (x0, x_j); returns 0 (stop) or the other test.
  virtual int decide_stage2(int j, const Vector& xj) const = 0;
  /// Prediction of the outcome mean at terminal state `s`.
  virtual double predict(InformationState s, const Vector& features) const = 0;
};

}  // namespace costq
