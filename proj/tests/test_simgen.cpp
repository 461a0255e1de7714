#include "costq/simgen.hpp"

#include "costq/loss.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace costq;

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double phi(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double Phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Mean and variance of N(mu, sd^2) truncated to [lo, hi].
std::pair<double, double> truncated_moments(double mu, double sd, double lo, double hi) {
  const double a = (lo - mu) / sd, b = (hi - mu) / sd;
  const double Z = Phi(b) - Phi(a);
  const double r = (phi(a) - phi(b)) / Z;
  const double mean = mu + sd * r;
  const double var = sd * sd * (1.0 + (a * phi(a) - b * phi(b)) / Z - r * r);
  return {mean, var};
}

// corr(X0, X1) of the scenario-1 construction by midpoint integration over x0.
double scenario1_corr_oracle() {
  const int n = 20000;
  const double h = 4.0 / n;
  double w = 0, ex0 = 0, ex0sq = 0, ex1 = 0, ex1sq = 0, ex0x1 = 0;
  for (int i = 0; i < n; ++i) {
    const double x0 = -2.0 + (i + 0.5) * h;
    const double d = phi(x0);
    const auto [m, v] = truncated_moments(x0, 0.9, -2.0, 2.0);
    w += d;
    ex0 += d * x0;
    ex0sq += d * x0 * x0;
    ex1 += d * m;
    ex1sq += d * (v + m * m);
    ex0x1 += d * x0 * m;
  }
  ex0 /= w, ex0sq /= w, ex1 /= w, ex1sq /= w, ex0x1 /= w;
  return (ex0x1 - ex0 * ex1) / std::sqrt((ex0sq - ex0 * ex0) * (ex1sq - ex1 * ex1));
}

double sample_corr(const Dataset& d) {
  const double n = static_cast<double>(d.size());
  double a = 0, b = 0, aa = 0, bb = 0, ab = 0;
  for (const Record& r : d.records()) {
    const double x = r.x0[0], y = (*r.x1)[0];
    a += x, b += y, aa += x * x, bb += y * y, ab += x * y;
  }
  a /= n, b /= n, aa /= n, bb /= n, ab /= n;
  return (ab - a * b) / std::sqrt((aa - a * a) * (bb - b * b));
}

Vector v1(double a) { return Vector::Constant(1, a); }
Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

}  // namespace

TEST_CASE("scenario 1 samples stay on the truncation box") {
  const Dataset d = generate_scenario1(5000, 3);
  for (const Record& r : d.records()) {
    for (double x : {r.x0[0], (*r.x1)[0], (*r.x2)[0]}) {
      CHECK(x >= -2.0);
      CHECK(x <= 2.0);
    }
    CHECK((r.y == 0.0 || r.y == 1.0));
    CHECK(r.path == AcquisitionPath{1, 2});
  }
  CHECK(Scenario1().outcome_mean(0, 0, 0) == 0.5);
  CHECK(Scenario1().default_costs() == CostSchedule(0.01, 0.02));
}

TEST_CASE("scenario 1 correlation between x0 and x1 matches the truncated-normal oracle") {
  const Dataset d = generate_scenario1(50000, 11);
  const double r_oracle = scenario1_corr_oracle();
  const double r = sample_corr(d);
  const double se = (1.0 - r_oracle * r_oracle) / std::sqrt(50000.0);
  CHECK(std::abs(r - r_oracle) <= 3.0 * se);
}

TEST_CASE("generation is deterministic in the seed") {
  const Dataset a = generate_scenario1(300, 5);
  const Dataset b = generate_scenario1(300, 5);
  const Dataset c = generate_scenario1(300, 6);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x0 == b[i].x0);
    CHECK(*a[i].x1 == *b[i].x1);
    CHECK(*a[i].x2 == *b[i].x2);
    CHECK(a[i].y == b[i].y);
    differs = differs || a[i].x0 != c[i].x0;
  }
  CHECK(differs);
}

TEST_CASE("scenario 2-like samples the unit cube with the stand-in outcome mean") {
  const Dataset d = generate_scenario2_like(50000, 2);
  double ybar = 0.0;
  for (const Record& r : d.records()) {
    for (double x : {r.x0[0], (*r.x1)[0], (*r.x2)[0]}) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
    ybar += r.y;
  }
  ybar /= 50000.0;
  const int g = 60;
  double truth = 0.0;
  for (int a = 0; a < g; ++a)
    for (int b = 0; b < g; ++b)
      for (int c = 0; c < g; ++c) {
        const double x0 = (a + 0.5) / g, x1 = (b + 0.5) / g, x2 = (c + 0.5) / g;
        const double eta = 2.5 * (x0 - 0.5) + 3 * (x1 - 0.5) + 3 * (x2 - 0.5) +
                           4 * std::sin(2 * std::numbers::pi * x1) * (x2 - 0.5) + 2 * (x0 - 0.5) * (x1 - 0.5);
        truth += logistic(eta / 3.0);
      }
  truth /= g * g * g;
  const double se = std::sqrt(truth * (1 - truth) / 50000.0);
  CHECK(std::abs(ybar - truth) <= 3.0 * se);
  CHECK(Scenario2Like().default_costs() == CostSchedule(0.004, 0.002));
}

TEST_CASE("make_scenario resolves names") {
  CHECK(make_scenario("scenario1")->name() == "scenario1");
  CHECK(make_scenario("S2-like")->name() == "scenario2_like");
  CHECK(make_scenario("noise_tests")->name() == "noise_tests");
  CHECK(make_scenario("duplicate_test")->name() == "duplicate_test");
  CHECK_THROWS_AS(make_scenario("scenario9"), ConfigError);
}

TEST_CASE("duplicate scenario copies test 1 into test 2") {
  const Dataset d = generate_full(DuplicateTestScenario(), 200, 1);
  for (const Record& r : d.records()) CHECK((*r.x1)[0] == (*r.x2)[0]);
}

TEST_CASE("behavior policy with zero scores splits the first stage evenly") {
  const Dataset full = generate_scenario1(10000, 4);
  const ObservedData obs = apply_behavior_policy(full, BehaviorPolicy::uninformative(), 9);
  std::array<double, 3> freq{};
  for (const Record& r : obs.data.records()) freq[static_cast<std::size_t>(r.path.s1)] += 1.0;
  const double se = std::sqrt((1.0 / 3) * (2.0 / 3) / 10000.0);
  for (double f : freq) CHECK(std::abs(f / 10000.0 - 1.0 / 3) <= 3.0 * se);
}

TEST_CASE("a strongly negative continuation score never reaches both tests") {
  const Dataset full = generate_scenario1(3000, 4);
  BehaviorPolicy b;
  b.alpha = -50.0;
  b.enforce_bound = false;
  const ObservedData obs = apply_behavior_policy(full, b, 2);
  for (const Record& r : obs.data.records()) CHECK(r.path.s2 == 0);
}

TEST_CASE("observed data masks exactly the unvisited blocks") {
  const Dataset full = generate_scenario1(2000, 8);
  const ObservedData obs = apply_behavior_policy(full, BehaviorPolicy{}, 8);
  std::array<int, 5> counts{};
  for (std::size_t i = 0; i < full.size(); ++i) {
    const Record& r = obs.data[i];
    ++counts[path_index(r.path)];
    CHECK(r.x0 == full[i].x0);
    CHECK(r.y == full[i].y);
    const InformationState s = r.state();
    CHECK(r.x1.has_value() == observes_block(s, 1));
    CHECK(r.x2.has_value() == observes_block(s, 2));
  }
  for (int c : counts) CHECK(c > 0);
}

TEST_CASE("stored behavior probabilities are calibrated within decile bins") {
  const Dataset full = generate_scenario1(20000, 12);
  const ObservedData obs = apply_behavior_policy(full, BehaviorPolicy{}, 12);
  const std::size_t n = full.size();

  // First stage: P(S1 = 1) by deciles of its stored probability.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return obs.truth.stage1[a][1] < obs.truth.stage1[b][1]; });
  for (int bin = 0; bin < 10; ++bin) {
    double hits = 0, expect = 0, var = 0;
    for (std::size_t k = bin * n / 10; k < (bin + 1) * n / 10; ++k) {
      const std::size_t i = order[k];
      const double p = obs.truth.stage1[i][1];
      hits += obs.data[i].path.s1 == 1 ? 1.0 : 0.0;
      expect += p;
      var += p * (1 - p);
    }
    CHECK(std::abs(hits - expect) <= 3.0 * std::sqrt(var));
  }

  // Second stage among S1 = 1.
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i)
    if (obs.data[i].path.s1 == 1) rows.push_back(i);
  std::sort(rows.begin(), rows.end(),
            [&](std::size_t a, std::size_t b) { return obs.truth.stage2[a] < obs.truth.stage2[b]; });
  const std::size_t m = rows.size();
  for (int bin = 0; bin < 10; ++bin) {
    double hits = 0, expect = 0, var = 0;
    for (std::size_t k = bin * m / 10; k < (bin + 1) * m / 10; ++k) {
      const std::size_t i = rows[k];
      const double p = obs.truth.stage2[i];
      hits += obs.data[i].path.s2 == 2 ? 1.0 : 0.0;
      expect += p;
      var += p * (1 - p);
    }
    CHECK(std::abs(hits - expect) <= 3.0 * std::sqrt(var));
  }
}

TEST_CASE("true behavior probabilities give inverse weights averaging one") {
  const Dataset full = generate_scenario1(20000, 21);
  const ObservedData obs = apply_behavior_policy(full, BehaviorPolicy{}, 21);
  for (int j : {1, 2}) {
    double sum = 0, sumsq = 0, cnt = 0;
    for (std::size_t i = 0; i < full.size(); ++i) {
      if (obs.data[i].path.s1 != j) continue;
      const double w = obs.data[i].path.s2 == other_test(j) ? 1.0 / obs.truth.stage2[i] : 0.0;
      sum += w, sumsq += w * w, cnt += 1;
    }
    const double mean = sum / cnt;
    const double se = std::sqrt((sumsq / cnt - mean * mean) / cnt);
    CHECK(std::abs(mean - 1.0) <= 3.0 * se);
  }
  for (int j : {0, 1, 2}) {
    double sum = 0, sumsq = 0;
    const double n = static_cast<double>(full.size());
    for (std::size_t i = 0; i < full.size(); ++i) {
      const double w = obs.data[i].path.s1 == j ? 1.0 / obs.truth.stage1[i][static_cast<std::size_t>(j)] : 0.0;
      sum += w, sumsq += w * w;
    }
    const double mean = sum / n;
    CHECK(std::abs(mean - 1.0) <= 3.0 * std::sqrt((sumsq / n - mean * mean) / n));
  }
}

TEST_CASE("actions ignore unobserved blocks") {
  const Dataset full = generate_scenario1(1000, 30);
  std::vector<Record> shuffled = full.records();
  // Rotate x2 across records: it is never seen by records with S1 = 1 before deciding.
  for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled[i].x2 = full[(i + 17) % full.size()].x2;
  const Dataset permuted(shuffled, full.dims(), full.outcome());
  const ObservedData a = apply_behavior_policy(full, BehaviorPolicy{}, 4);
  const ObservedData b = apply_behavior_policy(permuted, BehaviorPolicy{}, 4);
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (a.data[i].path.s1 == 2) continue;
    CHECK(a.data[i].path == b.data[i].path);
  }
}

TEST_CASE("default behavior policy respects positivity while the steeper slope does not") {
  CHECK_NOTHROW(BehaviorPolicy{}.check_positivity(Scenario1()));
  CHECK_NOTHROW(BehaviorPolicy{}.check_positivity(Scenario2Like()));
  BehaviorPolicy steep;
  steep.b1 = 0.8;
  steep.b2 = -0.8;
  CHECK_THROWS_AS(steep.check_positivity(Scenario1()), ConfigError);
  const Dataset full = generate_scenario1(500, 1);
  CHECK_THROWS_AS(apply_behavior_policy(full, steep, 1), ConfigError);
}

TEST_CASE("behavior probabilities stay in the positivity band") {
  const Dataset full = generate_scenario1(5000, 14);
  const ObservedData obs = apply_behavior_policy(full, BehaviorPolicy{}, 14);
  for (std::size_t i = 0; i < full.size(); ++i) {
    double total = 0;
    for (double p : obs.truth.stage1[i]) {
      CHECK(p >= 0.05);
      CHECK(p <= 0.95);
      total += p;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
    if (obs.data[i].path.s1 != 0) {
      CHECK(obs.truth.stage2[i] >= 0.05);
      CHECK(obs.truth.stage2[i] <= 0.95);
    } else {
      CHECK(std::isnan(obs.truth.stage2[i]));
    }
  }
}

TEST_CASE("expected cross-entropy matches its definition") {
  CHECK(expected_cross_entropy(0.3, 0.6) ==
        doctest::Approx(0.3 * -std::log(0.6) + 0.7 * -std::log(0.4)).epsilon(1e-14));
  CHECK(expected_cross_entropy(0.5, 0.5) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("quadrature conditional means agree with direct Monte Carlo") {
  const Scenario1 sc;
  Rng rng(77);
  const double x0 = 0.4, x1 = -0.7;
  double sum = 0;
  const int draws = 200000;
  for (int d = 0; d < draws; ++d) sum += sc.outcome_mean(x0, x1, sample_truncated_normal(rng, x0, 0.9, -2, 2));
  const double mc = sum / draws;
  CHECK(std::abs(true_mean(sc, InformationState::S1only, v2(x0, x1)) - mc) < 0.003);
  CHECK(true_mean(sc, InformationState::S12, Vector::Zero(3)) == 0.5);
  CHECK_THROWS_AS(true_mean(sc, InformationState::S0, v2(0, 0)), DimMismatch);
}

TEST_CASE("pure-noise tests cost exactly their price") {
  const NoiseTestsScenario sc;
  const CostSchedule costs(0.01, 0.02);
  for (double x0 : {-1.5, 0.0, 1.2})
    for (double xj : {-1.0, 0.5}) {
      CHECK(exact_stage2_contrast(sc, costs, 1, v2(x0, xj)) == doctest::Approx(0.02).epsilon(1e-9));
      CHECK(exact_stage2_contrast(sc, costs, 2, v2(x0, xj)) == doctest::Approx(0.01).epsilon(1e-9));
    }
  CHECK(exact_stage1_contrast(sc, costs, 1, v1(0.3)) == doctest::Approx(0.01).epsilon(1e-9));

  GridSpec grid;
  grid.points = 5;
  const OracleTables t = oracle_tables(sc, costs, grid, 20000, 3, false);
  for (const OracleCell& c : t.stage2_contrast[0]) {
    CHECK(c.count == 20000);
    CHECK(c.se > 0.0);
    CHECK(std::abs(c.mean - 0.02) <= 3.0 * c.se + 1e-12);
  }
}

TEST_CASE("a duplicated test carries no extra information") {
  const DuplicateTestScenario sc;
  const CostSchedule free(0.0, 0.0);
  for (double x0 : {-1.0, 0.5})
    for (double xj : {-1.2, 0.0, 1.4}) CHECK(std::abs(exact_stage2_contrast(sc, free, 1, v2(x0, xj))) < 1e-12);
  GridSpec grid;
  grid.points = 4;
  const OracleTables t = oracle_tables(sc, free, grid, 2000, 5, false);
  for (const OracleCell& c : t.stage2_contrast[0]) CHECK(std::abs(c.mean) < 1e-12);
}

TEST_CASE("Monte Carlo oracle tables agree with quadrature") {
  const Scenario1 sc;
  const CostSchedule costs = sc.default_costs();
  GridSpec grid;
  grid.points = 5;
  const OracleTables t = oracle_tables(sc, costs, grid, 20000, 17, true);
  const std::size_t P = t.grid.size();
  for (int j : {1, 2}) {
    const auto u = static_cast<std::size_t>(j - 1);
    for (std::size_t a = 0; a < P; ++a) {
      for (std::size_t b = 0; b < P; ++b) {
        const OracleCell& c = t.stage2_contrast[u][a * P + b];
        const double exact = exact_stage2_contrast(sc, costs, j, v2(t.grid[a], t.grid[b]));
        CHECK(std::abs(c.mean - exact) <= 4.0 * c.se);
        const OracleCell& q = t.q_star[u][a * P + b];
        const double mj = true_mean(sc, single_test_state(j), v2(t.grid[a], t.grid[b]));
        CHECK(q.mean <= expected_cross_entropy(mj, mj) + costs.test_cost(j) + 3.0 * q.se);
        CHECK(t.stage2_action[u][a * P + b] == rule_stage2(c.mean, j));
      }
      const OracleCell& s1 = t.stage1_contrast[u][a];
      CHECK(std::abs(s1.mean - exact_stage1_contrast(sc, costs, j, v1(t.grid[a]))) <= 4.0 * s1.se);
    }
  }
  for (std::size_t a = 0; a < P; ++a) {
    const double m0 = true_mean(sc, InformationState::S0, v1(t.grid[a]));
    CHECK(t.optimal_value[a].mean <= expected_cross_entropy(m0, m0) + 1e-12);
  }
}

TEST_CASE("raising the second test's cost shifts its contrast by the same amount") {
  const Scenario1 sc;
  GridSpec grid;
  grid.points = 4;
  const double delta = 0.037;
  const OracleTables a = oracle_tables(sc, CostSchedule(0.01, 0.02), grid, 500, 9, false);
  const OracleTables b = oracle_tables(sc, CostSchedule(0.01, 0.02 + delta), grid, 500, 9, false);
  for (std::size_t k = 0; k < a.stage2_contrast[0].size(); ++k) {
    CHECK(std::abs(b.stage2_contrast[0][k].mean - a.stage2_contrast[0][k].mean - delta) < 1e-12);
    CHECK(std::abs(b.stage2_contrast[0][k].se - a.stage2_contrast[0][k].se) < 1e-12);
  }
}

TEST_CASE("oracle tables do not depend on the worker count and survive JSON") {
  const Scenario1 sc;
  GridSpec grid;
  grid.points = 3;
  const OracleTables a = oracle_tables(sc, sc.default_costs(), grid, 300, 4, true, 1);
  const OracleTables b = oracle_tables(sc, sc.default_costs(), grid, 300, 4, true, 3);
  CHECK(a.to_json() == b.to_json());
  const OracleTables c = OracleTables::from_json(nlohmann::json::parse(a.to_json().dump()));
  CHECK(c.to_json() == a.to_json());
  const auto [mean, se] = a.interpolate_stage2(1, a.grid[1], a.grid[2]);
  CHECK(mean == a.stage2_contrast[0][1 * 3 + 2].mean);
  CHECK(se == a.stage2_contrast[0][1 * 3 + 2].se);
  const auto mid = a.interpolate_stage2(2, 0.5 * (a.grid[0] + a.grid[1]), a.grid[0]);
  CHECK(mid.first == doctest::Approx(0.5 * (a.stage2_contrast[1][0].mean + a.stage2_contrast[1][3].mean)));
  CHECK_THROWS_AS(OracleTables::from_json(nlohmann::json{{"format", "other"}}), SchemaError);
  GridSpec bad;
  bad.lo = -3.0;
  CHECK_THROWS_AS(oracle_tables(sc, sc.default_costs(), bad, 100, 1), ConfigError);
}

TEST_CASE("misspecification plans override the intended learners") {
  CostqConfig cfg;
  const CostqConfig original = cfg;
  nuisance_misspec(MisspecSetting::A).apply(cfg);
  CHECK(cfg.hash() == original.hash());

  CostqConfig b = original;
  nuisance_misspec(MisspecSetting::B).apply(b);
  CHECK(b.propensity_stage1.degree == 0);
  CHECK(b.propensity_stage2.degree == 0);
  CHECK(b.aux_contrast.degree == original.aux_contrast.degree);

  CostqConfig c = original;
  nuisance_misspec(MisspecSetting::C).apply(c);
  CHECK(c.aux_contrast.degree == 0);
  CHECK(c.propensity_stage1.degree == original.propensity_stage1.degree);
  CHECK(misspec_from_string("B") == MisspecSetting::B);
  CHECK(to_string(MisspecSetting::C) == "C");
  CHECK_THROWS_AS(misspec_from_string("D"), ConfigError);

  // Constant-probability propensities reproduce the marginal action frequencies.
  const Dataset full = generate_scenario1(3000, 2);
  const ObservedData obs = apply_behavior_policy(full, BehaviorPolicy{}, 2);
  const auto rows = all_rows(obs.data);
  const PropensityModels pm = fit_propensity_models(obs.data, rows, b.propensity_stage1, b.propensity_stage2);
  std::array<double, 3> freq{};
  for (const Record& r : obs.data.records()) freq[static_cast<std::size_t>(r.path.s1)] += 1.0 / 3000.0;
  for (double x0 : {-1.5, 0.0, 1.5}) {
    const Matrix p = pm.stage1.predict_proba(Matrix::Constant(1, 1, x0));
    for (int a = 0; a < 3; ++a) CHECK(p(0, a) == doctest::Approx(freq[static_cast<std::size_t>(a)]).epsilon(1e-4));
  }

  // An intercept-only auxiliary contrast is the label mean.
  std::vector<double> labels(full.size());
  double sum = 0, cnt = 0;
  for (std::size_t i = 0; i < full.size(); ++i) {
    labels[i] = std::sin(3.0 * full[i].x0[0]);
    if (obs.data[i].path.s1 == 1) sum += labels[i], cnt += 1;
  }
  const FittedModel aux = fit_stage1_aux(obs.data, labels, rows, 1, c.aux_contrast);
  for (double x0 : {-1.0, 0.7}) CHECK(aux.predict_one(v1(x0)) == doctest::Approx(sum / cnt).epsilon(1e-9));
}
