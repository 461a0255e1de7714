#pragma once

#include "costq/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <string_view>

namespace costq {

enum class LearnerKind : std::uint8_t { linear, logistic, softmax, kernel };
enum class OptimizerMethod : std::uint8_t { newton, gradient_descent };

std::string_view to_string(LearnerKind kind);
LearnerKind learner_kind_from_string(std::string_view name);
std::string_view to_string(OptimizerMethod method);
OptimizerMethod optimizer_from_string(std::string_view name);

struct OptimizerConfig {
  OptimizerMethod method = OptimizerMethod::newton;
  double initial_step = 1.0;
  int max_iters = 10000;
  double grad_tol = 1e-8;
};

/// Polynomial degree 0 keeps only the intercept, degree 1 is the identity map,
/// degree d >= 2 adds every monomial of total degree <= d (interactions included).
struct LearnerConfig {
  LearnerKind kind = LearnerKind::linear;
  int degree = 2;
  double ridge = 1e-4;
  OptimizerConfig optimizer;
  int num_classes = 2;
  /// Kernel bandwidth shared by all dimensions; <= 0 selects 1.06 * sd * n^(-1/5) per dimension.
  double bandwidth = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const LearnerConfig&, const LearnerConfig&) = default;
};

nlohmann::json to_json(const LearnerConfig& config);
LearnerConfig learner_config_from_json(const nlohmann::json& j);

/// Monomial expansion followed by standardization with training moments.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int input_dim, int degree);

  int input_dim() const noexcept { return input_dim_; }
  int degree() const noexcept { return degree_; }
  int output_dim() const noexcept { return static_cast<int>(monomials_.size()); }
  const std::vector<std::vector<int>>& monomials() const noexcept { return monomials_; }

  Matrix expand(const Matrix& X) const;

 private:
  int input_dim_ = 0;
  int degree_ = 1;
  std::vector<std::vector<int>> monomials_;  // exponent vector per output column
};

/// Immutable result of a fit. Parametric kinds hold an intercept row plus weights on the
/// standardized expanded features; the kernel kind keeps its training pairs.
class FittedModel {
 public:
  FittedModel() = default;

  const LearnerConfig& config() const noexcept { return config_; }
  LearnerKind kind() const noexcept { return config_.kind; }
  int input_dim() const noexcept { return input_dim_; }
  int num_outputs() const noexcept;

  /// Regression value, or P(class 1) for logistic. Softmax models must use predict_proba.
  Vector predict(const Matrix& X) const;
  double predict_one(const Vector& x) const;
  /// Rows are class probability vectors.
  Matrix predict_proba(const Matrix& X) const;

  /// Euclidean norm of the non-intercept parameters.
  double coefficient_norm() const;
  const Matrix& coefficients() const noexcept { return coef_; }
  int iterations() const noexcept { return iterations_; }
  bool converged() const noexcept { return converged_; }
  bool separation_warning() const noexcept { return separation_warning_; }
  /// Number of kernel queries that fell back to the training mean.
  std::size_t empty_region_queries() const noexcept { return empty_region_queries_; }

  nlohmann::json to_json() const;
  static FittedModel from_json(const nlohmann::json& j);

  friend FittedModel fit_regressor(const Matrix&, const Vector&, const LearnerConfig&);
  friend FittedModel fit_classifier(const Matrix&, const Eigen::VectorXi&, const LearnerConfig&);
  friend FittedModel constant_model(double, int, const LearnerConfig&);

 private:
  Matrix standardized(const Matrix& X) const;
  Matrix linear_scores(const Matrix& X) const;
  Vector kernel_predict(const Matrix& X) const;

  LearnerConfig config_;
  int input_dim_ = 0;
  FeatureMap map_;
  Vector center_;
  Vector scale_;
  std::vector<int> active_;  // expanded columns with nonzero training variance
  Matrix coef_;              // (1 + active) x outputs; row 0 is the intercept
  Matrix train_x_;
  Vector train_t_;
  Vector bandwidths_;
  double train_mean_ = 0.0;
  int iterations_ = 0;
  bool converged_ = true;
  bool separation_warning_ = false;
  mutable std::size_t empty_region_queries_ = 0;
};

/// Squared-error ERM (kind linear) or Nadaraya-Watson smoothing (kind kernel).
FittedModel fit_regressor(const Matrix& X, const Vector& t, const LearnerConfig& config);

/// Cross-entropy ERM; logistic needs labels in {0,1}, softmax in {0..K-1}.
FittedModel fit_classifier(const Matrix& X, const Eigen::VectorXi& labels, const LearnerConfig& config);

/// A model returning `value` for every input of dimension `input_dim`.
FittedModel constant_model(double value, int input_dim, const LearnerConfig& config);

/// Maximum relative discrepancy between the analytic gradient and central finite
/// differences with step 1e-6, evaluated at a random parameter drawn from `config.seed`.
/// For classifiers `t` holds integer labels.
double gradient_check(const LearnerConfig& config, const Matrix& X, const Vector& t);

}  // namespace costq
