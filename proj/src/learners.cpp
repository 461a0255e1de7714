#include "costq/learners.hpp"

#include "costq/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace costq {

std::string_view to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::linear: return "linear";
    case LearnerKind::logistic: return "logistic";
    case LearnerKind::softmax: return "softmax";
    case LearnerKind::kernel: return "kernel";
  }
  return "?";
}

LearnerKind learner_kind_from_string(std::string_view name) {
  for (auto k : {LearnerKind::linear, LearnerKind::logistic, LearnerKind::softmax, LearnerKind::kernel}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown learner kind '" + std::string(name) + "'");
}

std::string_view to_string(OptimizerMethod method) {
  return method == OptimizerMethod::newton ? "newton" : "gradient_descent";
}

OptimizerMethod optimizer_from_string(std::string_view name) {
  if (name == "newton") return OptimizerMethod::newton;
  if (name == "gradient_descent" || name == "gd") return OptimizerMethod::gradient_descent;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

void LearnerConfig::validate() const {
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw ConfigError("ridge penalty must be >= 0");
  if (degree < 0) throw ConfigError("polynomial degree must be >= 0");
  if (optimizer.max_iters < 1) throw ConfigError("max_iters must be >= 1");
  if (!(optimizer.grad_tol > 0.0)) throw ConfigError("gradient tolerance must be > 0");
  if (!(optimizer.initial_step > 0.0)) throw ConfigError("initial step must be > 0");
  if (num_classes < 2) throw ConfigError("a classifier needs at least 2 classes");
  if (kind == LearnerKind::logistic && num_classes != 2) throw ConfigError("logistic learner is binary");
  if (std::isnan(bandwidth)) throw ConfigError("kernel bandwidth must be a number");
}

nlohmann::json to_json(const LearnerConfig& c) {
  return {{"kind", std::string(to_string(c.kind))},
          {"degree", c.degree},
          {"ridge", c.ridge},
          {"num_classes", c.num_classes},
          {"bandwidth", c.bandwidth},
          {"seed", c.seed},
          {"optimizer",
           {{"method", std::string(to_string(c.optimizer.method))},
            {"initial_step", c.optimizer.initial_step},
            {"max_iters", c.optimizer.max_iters},
            {"grad_tol", c.optimizer.grad_tol}}}};
}

LearnerConfig learner_config_from_json(const nlohmann::json& j) {
  LearnerConfig c;
  try {
    c.kind = learner_kind_from_string(j.at("kind").get<std::string>());
    c.degree = j.at("degree").get<int>();
    c.ridge = j.at("ridge").get<double>();
    c.num_classes = j.at("num_classes").get<int>();
    c.bandwidth = j.at("bandwidth").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& o = j.at("optimizer");
    c.optimizer.method = optimizer_from_string(o.at("method").get<std::string>());
    c.optimizer.initial_step = o.at("initial_step").get<double>();
    c.optimizer.max_iters = o.at("max_iters").get<int>();
    c.optimizer.grad_tol = o.at("grad_tol").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed learner configuration: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Feature map
// ---------------------------------------------------------------------------

namespace {

void enumerate_monomials(int dim, int remaining, int start, std::vector<int>& current,
                         std::vector<std::vector<int>>& out) {
  if (remaining == 0) {
    out.push_back(current);
    return;
  }
  for (int v = start; v < dim; ++v) {
    ++current[v];
    enumerate_monomials(dim, remaining - 1, v, current, out);
    --current[v];
  }
}

}  // namespace

FeatureMap::FeatureMap(int input_dim, int degree) : input_dim_(input_dim), degree_(degree) {
  if (input_dim < 0 || degree < 0) throw ConfigError("invalid feature map");
  for (int total = 1; total <= degree; ++total) {
    std::vector<int> current(static_cast<std::size_t>(input_dim), 0);
    enumerate_monomials(input_dim, total, 0, current, monomials_);
  }
}

Matrix FeatureMap::expand(const Matrix& X) const {
  if (X.cols() != input_dim_) {
    throw DimMismatch("expected " + std::to_string(input_dim_) + " features, got " +
                      std::to_string(X.cols()));
  }
  Matrix Z(X.rows(), output_dim());
  for (int c = 0; c < output_dim(); ++c) {
    const auto& e = monomials_[static_cast<std::size_t>(c)];
    Vector col = Vector::Ones(X.rows());
    for (int v = 0; v < input_dim_; ++v) {
      for (int p = 0; p < e[static_cast<std::size_t>(v)]; ++p) col.array() *= X.col(v).array();
    }
    Z.col(c) = col;
  }
  return Z;
}

// ---------------------------------------------------------------------------
// Shared design preparation and objectives
// ---------------------------------------------------------------------------

namespace {

struct Design {
  FeatureMap map;
  Vector center;
  Vector scale;
  std::vector<int> active;
  Matrix D;  // leading column of ones, then standardized active features
};

Design prepare_design(const Matrix& X, int degree) {
  Design d;
  d.map = FeatureMap(static_cast<int>(X.cols()), degree);
  const Matrix Z = d.map.expand(X);
  const double n = static_cast<double>(X.rows());
  d.center = Z.colwise().mean().transpose();
  d.scale = Vector::Ones(Z.cols());
  for (Eigen::Index c = 0; c < Z.cols(); ++c) {
    const double var = (Z.col(c).array() - d.center[c]).square().sum() / n;
    const double sd = std::sqrt(var);
    if (sd > 1e-12 * (1.0 + std::abs(d.center[c]))) {
      d.scale[c] = sd;
      d.active.push_back(static_cast<int>(c));
    }
  }
  d.D.resize(X.rows(), 1 + static_cast<Eigen::Index>(d.active.size()));
  d.D.col(0).setOnes();
  for (std::size_t a = 0; a < d.active.size(); ++a) {
    const int c = d.active[a];
    d.D.col(static_cast<Eigen::Index>(a) + 1) = (Z.col(c).array() - d.center[c]) / d.scale[c];
  }
  return d;
}

double linear_objective(const Matrix& D, const Vector& t, double lambda, const Vector& theta,
                        Vector* grad) {
  const double n = static_cast<double>(D.rows());
  const Vector r = D * theta - t;
  Vector w = theta;
  w[0] = 0.0;
  if (grad) *grad = D.transpose() * r / n + lambda * w;
  return 0.5 * r.squaredNorm() / n + 0.5 * lambda * w.squaredNorm();
}

// Multinomial cross-entropy with class 0 as the reference (score fixed at 0).
class ClassObjective {
 public:
  ClassObjective(const Matrix& D, const Eigen::VectorXi& y, int K, double lambda)
      : D_(D), y_(y), K_(K), lambda_(lambda) {}

  Eigen::Index size() const { return D_.cols() * (K_ - 1); }

  // Probabilities for all K classes and the mean cross-entropy + penalty.
  double evaluate(const Vector& theta, Matrix* probs) const {
    const Eigen::Index p = D_.cols();
    const Eigen::Map<const Matrix> Theta(theta.data(), p, K_ - 1);
    const Matrix S = D_ * Theta;
    const Eigen::Index n = D_.rows();
    if (probs) probs->resize(n, K_);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = std::max(0.0, S.row(i).maxCoeff());
      double z = std::exp(-m);
      for (int k = 0; k < K_ - 1; ++k) z += std::exp(S(i, k) - m);
      const double lse = m + std::log(z);
      const int yi = y_[i];
      total += lse - (yi == 0 ? 0.0 : S(i, yi - 1));
      if (probs) {
        (*probs)(i, 0) = std::exp(-lse);
        for (int k = 1; k < K_; ++k) (*probs)(i, k) = std::exp(S(i, k - 1) - lse);
      }
    }
    double pen = 0.0;
    for (int k = 0; k < K_ - 1; ++k) pen += Theta.col(k).tail(p - 1).squaredNorm();
    return total / static_cast<double>(n) + 0.5 * lambda_ * pen;
  }

  Vector gradient(const Vector& theta, const Matrix& P) const {
    const Eigen::Index p = D_.cols();
    const double n = static_cast<double>(D_.rows());
    Matrix R = P.rightCols(K_ - 1);
    for (Eigen::Index i = 0; i < D_.rows(); ++i) {
      if (y_[i] > 0) R(i, y_[i] - 1) -= 1.0;
    }
    Matrix G = D_.transpose() * R / n;
    const Eigen::Map<const Matrix> Theta(theta.data(), p, K_ - 1);
    G.bottomRows(p - 1) += lambda_ * Theta.bottomRows(p - 1);
    return Eigen::Map<const Vector>(G.data(), G.size());
  }

  Matrix hessian(const Matrix& P) const {
    const Eigen::Index p = D_.cols();
    const double n = static_cast<double>(D_.rows());
    Matrix H = Matrix::Zero(size(), size());
    for (int k = 1; k < K_; ++k) {
      for (int l = k; l < K_; ++l) {
        Vector w = -P.col(k).cwiseProduct(P.col(l));
        if (k == l) w += P.col(k);
        const Matrix block = D_.transpose() * w.asDiagonal() * D_ / n;
        H.block((k - 1) * p, (l - 1) * p, p, p) = block;
        if (l != k) H.block((l - 1) * p, (k - 1) * p, p, p) = block.transpose();
      }
      for (Eigen::Index r = 1; r < p; ++r) H((k - 1) * p + r, (k - 1) * p + r) += lambda_;
    }
    return H;
  }

 private:
  const Matrix& D_;
  const Eigen::VectorXi& y_;
  int K_;
  double lambda_;
};

struct OptimResult {
  Vector theta;
  int iterations = 0;
  bool converged = false;
};

OptimResult minimize_classification(const ClassObjective& obj, const OptimizerConfig& opt) {
  OptimResult res;
  res.theta = Vector::Zero(obj.size());
  Matrix P;
  double f = obj.evaluate(res.theta, &P);
  double step_memory = opt.initial_step;
  for (int it = 0; it < opt.max_iters; ++it) {
    const Vector g = obj.gradient(res.theta, P);
    if (g.lpNorm<Eigen::Infinity>() <= opt.grad_tol) {
      res.converged = true;
      res.iterations = it;
      return res;
    }
    Vector dir = -g;
    double step = opt.initial_step;
    if (opt.method == OptimizerMethod::newton) {
      const Eigen::LDLT<Matrix> ldlt(obj.hessian(P));
      if (ldlt.info() == Eigen::Success) {
        Vector cand = ldlt.solve(-g);
        if (cand.allFinite() && cand.dot(g) < 0.0) dir = cand;
      }
    } else {
      step = std::min(2.0 * step_memory, 1e6);
    }
    const double slope = g.dot(dir);
    Matrix Pn;
    bool accepted = false;
    for (int h = 0; h < 80; ++h) {
      const Vector cand = res.theta + step * dir;
      const double fn = obj.evaluate(cand, &Pn);
      if (std::isfinite(fn) && fn <= f + 1e-4 * step * slope) {
        res.theta = cand;
        f = fn;
        P = std::move(Pn);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    res.iterations = it + 1;
    step_memory = step;
    if (!accepted) return res;
  }
  res.converged = obj.gradient(res.theta, P).lpNorm<Eigen::Infinity>() <= opt.grad_tol;
  return res;
}

Vector silverman_bandwidths(const Matrix& X) {
  const double n = static_cast<double>(X.rows());
  Vector h(X.cols());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    const double mean = X.col(c).mean();
    const double var = n > 1 ? (X.col(c).array() - mean).square().sum() / (n - 1.0) : 0.0;
    const double sd = std::sqrt(var);
    h[c] = sd > 0.0 ? 1.06 * sd * std::pow(n, -0.2) : 1.0;
  }
  return h;
}

void check_rows(const Matrix& X, Eigen::Index n_targets) {
  if (X.rows() == 0) throw EmptyData("cannot fit on zero rows");
  if (X.rows() != n_targets) throw DimMismatch("design rows and target length differ");
  if (!X.allFinite()) throw Error("design matrix contains non-finite values");
}

}  // namespace

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

FittedModel fit_regressor(const Matrix& X, const Vector& t, const LearnerConfig& config) {
  config.validate();
  if (config.kind != LearnerKind::linear && config.kind != LearnerKind::kernel) {
    throw ConfigError("fit_regressor needs a linear or kernel learner");
  }
  check_rows(X, t.size());
  if (!t.allFinite()) throw Error("regression targets contain non-finite values");

  FittedModel m;
  m.config_ = config;
  m.input_dim_ = static_cast<int>(X.cols());
  m.train_mean_ = t.mean();

  if (config.kind == LearnerKind::kernel) {
    m.train_x_ = X;
    m.train_t_ = t;
    m.bandwidths_ = config.bandwidth > 0.0 ? Vector::Constant(X.cols(), config.bandwidth)
                                           : silverman_bandwidths(X);
    return m;
  }

  Design d = prepare_design(X, config.degree);
  if (d.active.empty() && config.ridge == 0.0 && config.degree >= 1 && X.cols() > 0) {
    throw DegenerateDesign("all design rows are identical and the ridge penalty is zero");
  }
  const double n = static_cast<double>(X.rows());
  const Eigen::Index a = static_cast<Eigen::Index>(d.active.size());
  Vector theta = Vector::Zero(1 + a);
  theta[0] = m.train_mean_;
  if (a > 0) {
    const Matrix Zs = d.D.rightCols(a);
    const Vector tc = t.array() - m.train_mean_;
    Vector w;
    if (config.ridge > 0.0) {
      Matrix A = Zs.transpose() * Zs / n;
      A.diagonal().array() += config.ridge;
      w = A.ldlt().solve(Zs.transpose() * tc / n);
    } else {
      w = Zs.completeOrthogonalDecomposition().solve(tc);
    }
    theta.tail(a) = w;
  }
  m.map_ = std::move(d.map);
  m.center_ = std::move(d.center);
  m.scale_ = std::move(d.scale);
  m.active_ = std::move(d.active);
  m.coef_ = theta;
  m.iterations_ = 1;
  return m;
}

FittedModel fit_classifier(const Matrix& X, const Eigen::VectorXi& labels, const LearnerConfig& config) {
  config.validate();
  if (config.kind != LearnerKind::logistic && config.kind != LearnerKind::softmax) {
    throw ConfigError("fit_classifier needs a logistic or softmax learner");
  }
  check_rows(X, labels.size());
  const int K = config.kind == LearnerKind::logistic ? 2 : config.num_classes;
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= K) {
      throw LabelOutOfRange("label " + std::to_string(labels[i]) + " at row " + std::to_string(i + 1) +
                            " outside 0.." + std::to_string(K - 1));
    }
  }
  Design d = prepare_design(X, config.degree);
  if (d.active.empty() && config.ridge == 0.0 && config.degree >= 1 && X.cols() > 0) {
    throw DegenerateDesign("all design rows are identical and the ridge penalty is zero");
  }
  const ClassObjective obj(d.D, labels, K, config.ridge);
  const OptimResult res = minimize_classification(obj, config.optimizer);

  FittedModel m;
  m.config_ = config;
  m.config_.num_classes = K;
  m.input_dim_ = static_cast<int>(X.cols());
  m.map_ = std::move(d.map);
  m.center_ = std::move(d.center);
  m.scale_ = std::move(d.scale);
  m.active_ = std::move(d.active);
  m.coef_ = Eigen::Map<const Matrix>(res.theta.data(), 1 + static_cast<Eigen::Index>(m.active_.size()), K - 1);
  m.iterations_ = res.iterations;
  m.converged_ = res.converged;
  if (!res.converged) {
    spdlog::debug("{} fit stopped after {} iterations without reaching tolerance", to_string(config.kind),
                  res.iterations);
  }
  const Matrix P = m.predict_proba(X);
  m.separation_warning_ = P.minCoeff() < 1e-6;
  return m;
}

FittedModel constant_model(double value, int input_dim, const LearnerConfig& config) {
  FittedModel m;
  m.config_ = config;
  m.config_.kind = LearnerKind::linear;
  m.config_.degree = 0;
  m.input_dim_ = input_dim;
  m.map_ = FeatureMap(input_dim, 0);
  m.center_ = Vector(0);
  m.scale_ = Vector(0);
  m.coef_ = Matrix::Constant(1, 1, value);
  m.train_mean_ = value;
  return m;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

int FittedModel::num_outputs() const noexcept {
  return config_.kind == LearnerKind::softmax ? config_.num_classes : 1;
}

Matrix FittedModel::standardized(const Matrix& X) const {
  const Matrix Z = map_.expand(X);
  Matrix D(X.rows(), 1 + static_cast<Eigen::Index>(active_.size()));
  D.col(0).setOnes();
  for (std::size_t a = 0; a < active_.size(); ++a) {
    const int c = active_[a];
    D.col(static_cast<Eigen::Index>(a) + 1) = (Z.col(c).array() - center_[c]) / scale_[c];
  }
  return D;
}

Matrix FittedModel::linear_scores(const Matrix& X) const { return standardized(X) * coef_; }

Vector FittedModel::kernel_predict(const Matrix& X) const {
  Vector out(X.rows());
  std::size_t empty = 0;
  const Eigen::Index n = train_x_.rows();
  const Eigen::RowVectorXd inv_h = bandwidths_.cwiseInverse().transpose();
  for (Eigen::Index q = 0; q < X.rows(); ++q) {
    double num = 0.0;
    double den = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u2 = ((X.row(q) - train_x_.row(i)).cwiseProduct(inv_h)).squaredNorm();
      const double w = std::exp(-0.5 * u2);
      num += w * train_t_[i];
      den += w;
    }
    if (den < 1e-300) {
      out[q] = train_mean_;
      ++empty;
    } else {
      out[q] = num / den;
    }
  }
  if (empty > 0) {
    empty_region_queries_ += empty;
    spdlog::warn("kernel smoother: {} of {} queries had no support and used the training mean", empty,
                 X.rows());
  }
  return out;
}

Vector FittedModel::predict(const Matrix& X) const {
  if (X.cols() != input_dim_) {
    throw DimMismatch("model expects " + std::to_string(input_dim_) + " features, got " +
                      std::to_string(X.cols()));
  }
  switch (config_.kind) {
    case LearnerKind::linear: return linear_scores(X).col(0);
    case LearnerKind::kernel: return kernel_predict(X);
    case LearnerKind::logistic: return predict_proba(X).col(1);
    case LearnerKind::softmax: break;
  }
  throw Error("softmax models return class probabilities; use predict_proba");
}

double FittedModel::predict_one(const Vector& x) const {
  return predict(Matrix(x.transpose()))[0];
}

Matrix FittedModel::predict_proba(const Matrix& X) const {
  if (config_.kind != LearnerKind::logistic && config_.kind != LearnerKind::softmax) {
    throw Error("predict_proba requires a classifier");
  }
  if (X.cols() != input_dim_) {
    throw DimMismatch("model expects " + std::to_string(input_dim_) + " features, got " +
                      std::to_string(X.cols()));
  }
  const Matrix S = linear_scores(X);
  const int K = config_.num_classes;
  Matrix P(X.rows(), K);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double m = std::max(0.0, S.row(i).maxCoeff());
    double z = std::exp(-m);
    for (int k = 0; k < K - 1; ++k) z += std::exp(S(i, k) - m);
    P(i, 0) = std::exp(-m) / z;
    for (int k = 1; k < K; ++k) P(i, k) = std::exp(S(i, k - 1) - m) / z;
  }
  return P;
}

double FittedModel::coefficient_norm() const {
  if (config_.kind == LearnerKind::kernel || coef_.rows() <= 1) return 0.0;
  return coef_.bottomRows(coef_.rows() - 1).norm();
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

nlohmann::json matrix_to_json(const Matrix& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index cols_if_empty = 0) {
  const Eigen::Index r = static_cast<Eigen::Index>(j.size());
  const Eigen::Index c = r > 0 ? static_cast<Eigen::Index>(j[0].size()) : cols_if_empty;
  Matrix M(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != c) throw SchemaError("ragged matrix in model file");
    for (Eigen::Index k = 0; k < c; ++k) M(i, k) = j[i][k].get<double>();
  }
  return M;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

nlohmann::json FittedModel::to_json() const {
  nlohmann::json j;
  j["kind"] = std::string(to_string(config_.kind));
  j["input_dim"] = input_dim_;
  j["feature_map"] = {{"type", "polynomial"}, {"degree", map_.degree()}};
  j["ridge"] = config_.ridge;
  j["num_classes"] = config_.num_classes;
  j["optimizer"] = {{"method", std::string(to_string(config_.optimizer.method))},
                    {"initial_step", config_.optimizer.initial_step},
                    {"max_iters", config_.optimizer.max_iters},
                    {"grad_tol", config_.optimizer.grad_tol}};
  j["seed"] = config_.seed;
  if (config_.kind == LearnerKind::kernel) {
    j["bandwidths"] = to_std(bandwidths_);
    j["train_x"] = matrix_to_json(train_x_);
    j["train_t"] = to_std(train_t_);
    j["train_mean"] = train_mean_;
  } else {
    j["center"] = to_std(center_);
    j["scale"] = to_std(scale_);
    j["active"] = active_;
    j["coefficients"] = matrix_to_json(coef_);
    j["iterations"] = iterations_;
    j["converged"] = converged_;
  }
  return j;
}

FittedModel FittedModel::from_json(const nlohmann::json& j) {
  try {
    FittedModel m;
    m.config_.kind = learner_kind_from_string(j.at("kind").get<std::string>());
    m.input_dim_ = j.at("input_dim").get<int>();
    m.config_.degree = j.at("feature_map").at("degree").get<int>();
    m.config_.ridge = j.at("ridge").get<double>();
    m.config_.num_classes = j.at("num_classes").get<int>();
    const auto& o = j.at("optimizer");
    m.config_.optimizer.method = optimizer_from_string(o.at("method").get<std::string>());
    m.config_.optimizer.initial_step = o.at("initial_step").get<double>();
    m.config_.optimizer.max_iters = o.at("max_iters").get<int>();
    m.config_.optimizer.grad_tol = o.at("grad_tol").get<double>();
    m.config_.seed = j.at("seed").get<std::uint64_t>();
    if (m.input_dim_ < 0) throw SchemaError("negative input dimension in model file");
    if (m.config_.kind == LearnerKind::kernel) {
      m.bandwidths_ = vector_from_json(j.at("bandwidths"));
      m.train_x_ = matrix_from_json(j.at("train_x"), m.input_dim_);
      m.train_t_ = vector_from_json(j.at("train_t"));
      m.train_mean_ = j.at("train_mean").get<double>();
      if (m.bandwidths_.size() != m.input_dim_ || m.train_x_.cols() != m.input_dim_ ||
          m.train_x_.rows() != m.train_t_.size() || m.train_t_.size() == 0) {
        throw SchemaError("inconsistent kernel model");
      }
      if ((m.bandwidths_.array() <= 0.0).any()) throw SchemaError("kernel bandwidth must be positive");
      m.config_.bandwidth = 0.0;
    } else {
      m.map_ = FeatureMap(m.input_dim_, m.config_.degree);
      m.center_ = vector_from_json(j.at("center"));
      m.scale_ = vector_from_json(j.at("scale"));
      m.active_ = j.at("active").get<std::vector<int>>();
      m.coef_ = matrix_from_json(j.at("coefficients"));
      m.iterations_ = j.at("iterations").get<int>();
      m.converged_ = j.at("converged").get<bool>();
      const int expected_cols = m.config_.kind == LearnerKind::linear ? 1 : m.config_.num_classes - 1;
      if (m.center_.size() != m.map_.output_dim() || m.scale_.size() != m.map_.output_dim() ||
          m.coef_.rows() != 1 + static_cast<Eigen::Index>(m.active_.size()) ||
          m.coef_.cols() != expected_cols) {
        throw SchemaError("model parameter shapes do not match its feature map");
      }
      for (int a : m.active_) {
        if (a < 0 || a >= m.map_.output_dim()) throw SchemaError("active feature index out of range");
      }
    }
    m.config_.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed model: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

double gradient_check(const LearnerConfig& config, const Matrix& X, const Vector& t) {
  config.validate();
  check_rows(X, t.size());
  const Design d = prepare_design(X, config.degree);
  Rng rng(config.seed);
  constexpr double h = 1e-6;

  Vector ga;
  Vector gfd;
  if (config.kind == LearnerKind::linear) {
    Vector theta(d.D.cols());
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = rng.normal(0.0, 0.5);
    linear_objective(d.D, t, config.ridge, theta, &ga);
    gfd.resize(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Vector up = theta, dn = theta;
      up[i] += h;
      dn[i] -= h;
      gfd[i] = (linear_objective(d.D, t, config.ridge, up, nullptr) -
                linear_objective(d.D, t, config.ridge, dn, nullptr)) /
               (2.0 * h);
    }
  } else if (config.kind == LearnerKind::logistic || config.kind == LearnerKind::softmax) {
    const int K = config.kind == LearnerKind::logistic ? 2 : config.num_classes;
    const Eigen::VectorXi y = t.cast<int>();
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (y[i] < 0 || y[i] >= K || static_cast<double>(y[i]) != t[i]) {
        throw LabelOutOfRange("label at row " + std::to_string(i + 1) + " is not a valid class");
      }
    }
    const ClassObjective obj(d.D, y, K, config.ridge);
    Vector theta(obj.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = rng.normal(0.0, 0.5);
    Matrix P;
    obj.evaluate(theta, &P);
    ga = obj.gradient(theta, P);
    gfd.resize(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Vector up = theta, dn = theta;
      up[i] += h;
      dn[i] -= h;
      gfd[i] = (obj.evaluate(up, nullptr) - obj.evaluate(dn, nullptr)) / (2.0 * h);
    }
  } else {
    throw ConfigError("gradient_check applies to parametric learners only");
  }
  const double denom = std::max({ga.lpNorm<Eigen::Infinity>(), gfd.lpNorm<Eigen::Infinity>(), 1e-12});
  return (ga - gfd).lpNorm<Eigen::Infinity>() / denom;
}

}  // namespace costq
