#include "costq/learners.hpp"
#include "costq/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace costq;

namespace {

LearnerConfig linear_cfg(int degree = 1, double ridge = 0.0) {
  LearnerConfig c;
  c.kind = LearnerKind::linear;
  c.degree = degree;
  c.ridge = ridge;
  return c;
}

LearnerConfig logistic_cfg(int degree = 1, double ridge = 0.0) {
  LearnerConfig c;
  c.kind = LearnerKind::logistic;
  c.degree = degree;
  c.ridge = ridge;
  return c;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST_CASE("feature map enumerates monomials with interactions") {
  const FeatureMap m(2, 2);
  CHECK(m.output_dim() == 5);  // x, y, x^2, xy, y^2
  Matrix X(1, 2);
  X << 2.0, 3.0;
  const Matrix Z = m.expand(X);
  CHECK(Z(0, 0) == 2.0);
  CHECK(Z(0, 1) == 3.0);
  CHECK(Z(0, 2) == 4.0);
  CHECK(Z(0, 3) == 6.0);
  CHECK(Z(0, 4) == 9.0);
  CHECK(FeatureMap(3, 3).output_dim() == 19);
  CHECK(FeatureMap(3, 0).output_dim() == 0);
}

TEST_CASE("linear fit recovers an exact line") {
  Matrix X(3, 1);
  X << 1, 2, 3;
  Vector t(3);
  t << 2, 4, 6;
  const FittedModel m = fit_regressor(X, t, linear_cfg());
  Matrix Q(2, 1);
  Q << 0.0, 5.0;
  const Vector p = m.predict(Q);
  CHECK(p[0] == doctest::Approx(0.0).epsilon(1e-6).scale(1.0));
  CHECK(std::abs(p[0]) < 1e-6);
  CHECK(std::abs(p[1] - 10.0) < 1e-9);
  CHECK(std::abs(m.predict_one(Vector::Constant(1, 5.0)) - 10.0) < 1e-9);
}

TEST_CASE("constant targets give constant predictions for every regressor kind") {
  Rng rng(3);
  Matrix X(40, 2);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal(0, 1);
  const Vector t = Vector::Constant(40, 3.25);
  Matrix Q(5, 2);
  for (Eigen::Index i = 0; i < Q.size(); ++i) Q.data()[i] = rng.normal(0, 2);
  for (int degree : {0, 1, 2, 3}) {
    const Vector p = fit_regressor(X, t, linear_cfg(degree, 1e-3)).predict(Q);
    CHECK((p.array() - 3.25).abs().maxCoeff() < 1e-10);
  }
  LearnerConfig k;
  k.kind = LearnerKind::kernel;
  const Vector pk = fit_regressor(X, Vector::Constant(40, 7.0), k).predict(Q);
  CHECK((pk.array() - 7.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("noisy slope matches the closed-form OLS oracle") {
  Rng rng(11);
  const int n = 1000;
  Matrix X(n, 1);
  Vector t(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = rng.normal(0.0, 1.0);
    t[i] = 2.0 * X(i, 0) + rng.normal(0.0, 0.5);
  }
  const FittedModel m = fit_regressor(X, t, linear_cfg());
  const double slope = m.predict_one(Vector::Constant(1, 1.0)) - m.predict_one(Vector::Constant(1, 0.0));

  const double xbar = X.col(0).mean();
  const double tbar = t.mean();
  const double sxx = (X.col(0).array() - xbar).square().sum();
  const double sxt = ((X.col(0).array() - xbar) * (t.array() - tbar)).sum();
  const double b = sxt / sxx;
  const double a = tbar - b * xbar;
  const double rss = (t.array() - a - b * X.col(0).array()).square().sum();
  const double se = std::sqrt(rss / (n - 2) / sxx);
  CHECK(std::abs(slope - b) < 1e-10);
  CHECK(std::abs(slope - 2.0) < 3.0 * se);
}

TEST_CASE("ridge penalty shrinks the coefficient norm monotonically") {
  Rng rng(5);
  const int n = 200;
  Matrix X(n, 3);
  Vector t(n);
  Eigen::VectorXi y(n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) X(i, c) = rng.normal(0, 1);
    t[i] = X(i, 0) - 2 * X(i, 1) * X(i, 2) + rng.normal(0, 1);
    y[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-t[i]))) ? 1 : 0;
  }
  double prev_lin = INFINITY;
  double prev_log = INFINITY;
  for (double lambda : {0.0, 1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0}) {
    const double nl = fit_regressor(X, t, linear_cfg(2, lambda)).coefficient_norm();
    const double ng = fit_classifier(X, y, logistic_cfg(2, lambda)).coefficient_norm();
    CHECK(nl <= prev_lin * (1 + 1e-12));
    CHECK(ng <= prev_log * (1 + 1e-9));
    prev_lin = nl;
    prev_log = ng;
  }
}

TEST_CASE("degenerate and malformed inputs are rejected") {
  Matrix X = Matrix::Constant(5, 2, 1.5);
  const Vector t = Vector::LinSpaced(5, 0, 1);
  CHECK_THROWS_AS(fit_regressor(X, t, linear_cfg(1, 0.0)), DegenerateDesign);
  CHECK_NOTHROW(fit_regressor(X, t, linear_cfg(1, 0.1)));
  CHECK_THROWS_AS(fit_regressor(Matrix(0, 1), Vector(0), linear_cfg()), EmptyData);

  Matrix Xg(4, 1);
  Xg << 0, 1, 2, 3;
  Eigen::VectorXi bad(4);
  bad << 0, 1, 2, 1;
  CHECK_THROWS_AS(fit_classifier(Xg, bad, logistic_cfg(1, 0.1)), LabelOutOfRange);

  const FittedModel m = fit_regressor(Xg, Vector::LinSpaced(4, 0, 3), linear_cfg());
  CHECK_THROWS_AS(m.predict(Matrix::Zero(2, 3)), DimMismatch);
}

TEST_CASE("separable data reach full training accuracy") {
  Matrix X(10, 1);
  Eigen::VectorXi y(10);
  for (int i = 0; i < 10; ++i) {
    X(i, 0) = i - 4.5;
    y[i] = i >= 5 ? 1 : 0;
  }
  const FittedModel m = fit_classifier(X, y, logistic_cfg(1, 0.1));
  const Vector p = m.predict(X);
  for (int i = 0; i < 10; ++i) CHECK((p[i] > 0.5) == (y[i] == 1));
  CHECK(m.converged());

  const FittedModel hard = fit_classifier(X, y, logistic_cfg(1, 0.0));
  CHECK(hard.separation_warning());
}

TEST_CASE("a single observed class gets probability near one") {
  Rng rng(2);
  Matrix X(50, 1);
  for (int i = 0; i < 50; ++i) X(i, 0) = rng.normal(0, 1);
  const FittedModel m = fit_classifier(X, Eigen::VectorXi::Zero(50), logistic_cfg(1, 1e-3));
  const Vector p1 = m.predict(Matrix(Vector::LinSpaced(21, -3, 3)));
  CHECK((1.0 - p1.array()).minCoeff() >= 0.99);
}

TEST_CASE("logistic coefficients agree with the Fisher-information oracle") {
  Rng rng(17);
  const int n = 5000;
  Matrix X(n, 1);
  Eigen::VectorXi y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = rng.normal(0, 1);
    y[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-(0.5 + 1.5 * X(i, 0))))) ? 1 : 0;
  }
  const FittedModel m = fit_classifier(X, y, logistic_cfg(1, 0.0));
  REQUIRE(m.converged());
  const double a = logit(m.predict_one(Vector::Constant(1, 0.0)));
  const double b = logit(m.predict_one(Vector::Constant(1, 1.0))) - a;

  Eigen::Matrix2d info = Eigen::Matrix2d::Zero();
  for (int i = 0; i < n; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-(a + b * X(i, 0))));
    Eigen::Vector2d z(1.0, X(i, 0));
    info += p * (1 - p) * z * z.transpose();
  }
  const Eigen::Matrix2d cov = info.inverse();
  CHECK(std::abs(a - 0.5) < 3 * std::sqrt(cov(0, 0)));
  CHECK(std::abs(b - 1.5) < 3 * std::sqrt(cov(1, 1)));
}

TEST_CASE("gradient descent and Newton reach the same optimum") {
  Rng rng(23);
  const int n = 300;
  Matrix X(n, 2);
  Eigen::VectorXi y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = rng.normal(0, 1);
    X(i, 1) = rng.normal(0, 1);
    y[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-(X(i, 0) - X(i, 1))))) ? 1 : 0;
  }
  LearnerConfig nc = logistic_cfg(1, 1e-2);
  LearnerConfig gc = nc;
  gc.optimizer.method = OptimizerMethod::gradient_descent;
  gc.optimizer.grad_tol = 1e-7;
  const FittedModel a = fit_classifier(X, y, nc);
  const FittedModel b = fit_classifier(X, y, gc);
  CHECK(b.converged());
  CHECK((a.predict(X) - b.predict(X)).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("softmax probabilities lie in (0,1) and sum to one") {
  Rng rng(31);
  const int n = 600;
  Matrix X(n, 2);
  Eigen::VectorXi y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = rng.normal(0, 1);
    X(i, 1) = rng.normal(0, 1);
    const double s1 = X(i, 0), s2 = -X(i, 0) + 0.5 * X(i, 1);
    const double z = 1 + std::exp(s1) + std::exp(s2);
    y[i] = rng.categorical(std::array<double, 3>{1 / z, std::exp(s1) / z, std::exp(s2) / z});
  }
  LearnerConfig c;
  c.kind = LearnerKind::softmax;
  c.num_classes = 3;
  c.degree = 2;
  c.ridge = 1e-4;
  const FittedModel m = fit_classifier(X, y, c);
  CHECK(m.converged());
  Matrix Q(50, 2);
  for (Eigen::Index i = 0; i < Q.size(); ++i) Q.data()[i] = rng.normal(0, 3);
  const Matrix P = m.predict_proba(Q);
  CHECK(P.minCoeff() > 0.0);
  CHECK(P.maxCoeff() < 1.0);
  CHECK((P.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(m.predict(Q), Error);
}

TEST_CASE("kernel smoother interpolates with a tiny bandwidth") {
  Matrix X(5, 1);
  X << 0, 1, 2, 3, 4;
  Vector t(5);
  t << 3, -1, 4, 1, 5;
  LearnerConfig k;
  k.kind = LearnerKind::kernel;
  k.bandwidth = 1e-3;
  const FittedModel m = fit_regressor(X, t, k);
  CHECK((m.predict(X) - t).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(m.empty_region_queries() == 0);
  m.predict(Matrix::Constant(1, 1, 0.5));
  CHECK(m.empty_region_queries() == 1);
}

TEST_CASE("kernel smoother is linear in the targets") {
  Rng rng(41);
  const int n = 80;
  Matrix X(n, 2);
  Vector t(n), u(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = rng.normal(0, 1);
    X(i, 1) = rng.normal(0, 1);
    t[i] = rng.normal(0, 1);
    u[i] = rng.normal(0, 1);
  }
  LearnerConfig k;
  k.kind = LearnerKind::kernel;
  const double a = 1.7, b = -0.4;
  Matrix Q(20, 2);
  for (Eigen::Index i = 0; i < Q.size(); ++i) Q.data()[i] = rng.normal(0, 1);
  const Vector lhs = fit_regressor(X, a * t + b * u, k).predict(Q);
  const Vector rhs = a * fit_regressor(X, t, k).predict(Q) + b * fit_regressor(X, u, k).predict(Q);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("kernel default bandwidth follows the rule of thumb") {
  Rng rng(43);
  const int n = 500;
  Matrix X(n, 1);
  for (int i = 0; i < n; ++i) X(i, 0) = rng.normal(0, 2);
  const double mean = X.col(0).mean();
  const double sd = std::sqrt((X.col(0).array() - mean).square().sum() / (n - 1));
  LearnerConfig k;
  k.kind = LearnerKind::kernel;
  const FittedModel m = fit_regressor(X, X.col(0), k);
  const auto bw = m.to_json()["bandwidths"].get<std::vector<double>>();
  CHECK(bw[0] == doctest::Approx(1.06 * sd * std::pow(n, -0.2)).epsilon(1e-14));
}

TEST_CASE("analytic gradients match finite differences") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng rng(100 + s);
    const int n = 20;
    Matrix X(n, 2);
    Vector t(n), yb(n), y3(n);
    for (int i = 0; i < n; ++i) {
      X(i, 0) = rng.normal(0, 1);
      X(i, 1) = rng.normal(0, 1);
      t[i] = rng.normal(0, 1);
      yb[i] = rng.bernoulli(0.5) ? 1 : 0;
      y3[i] = rng.categorical(std::array<double, 3>{1, 1, 1});
    }
    LearnerConfig lin = linear_cfg(2, 0.05);
    lin.seed = s;
    LearnerConfig lg = logistic_cfg(2, 0.05);
    lg.seed = s;
    LearnerConfig sm;
    sm.kind = LearnerKind::softmax;
    sm.num_classes = 3;
    sm.degree = 2;
    sm.ridge = 0.05;
    sm.seed = s;
    CHECK(gradient_check(lin, X, t) <= 1e-8);
    CHECK(gradient_check(lg, X, yb) <= 1e-6);
    CHECK(gradient_check(sm, X, y3) <= 1e-6);
  }
}

TEST_CASE("fits are bit-identical across repetitions and survive a JSON round trip") {
  Rng rng(51);
  const int n = 300;
  Matrix X(n, 2);
  Eigen::VectorXi y(n);
  Vector t(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = rng.normal(0, 1);
    X(i, 1) = rng.uniform();
    t[i] = std::sin(X(i, 0)) + rng.normal(0, 0.1);
    y[i] = rng.categorical(std::array<double, 3>{1, 2, 1});
  }
  LearnerConfig sm;
  sm.kind = LearnerKind::softmax;
  sm.num_classes = 3;
  const FittedModel a = fit_classifier(X, y, sm);
  const FittedModel b = fit_classifier(X, y, sm);
  CHECK(a.coefficients() == b.coefficients());

  const FittedModel back = FittedModel::from_json(nlohmann::json::parse(a.to_json().dump()));
  CHECK(back.predict_proba(X) == a.predict_proba(X));

  const FittedModel lin = fit_regressor(X, t, linear_cfg(3, 1e-4));
  CHECK(FittedModel::from_json(nlohmann::json::parse(lin.to_json().dump())).predict(X) == lin.predict(X));

  LearnerConfig k;
  k.kind = LearnerKind::kernel;
  const FittedModel kern = fit_regressor(X, t, k);
  CHECK(FittedModel::from_json(nlohmann::json::parse(kern.to_json().dump())).predict(X) == kern.predict(X));

  const FittedModel c = constant_model(-0.25, 2, LearnerConfig{});
  CHECK((c.predict(X).array() == -0.25).all());
  CHECK(FittedModel::from_json(c.to_json()).predict_one(Vector::Zero(2)) == -0.25);
}
