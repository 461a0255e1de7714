#include "costq/simgen.hpp"

#include "costq/dataset_io.hpp"
#include "costq/loss.hpp"
#include "costq/parallel.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

namespace costq {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double mean_of(const Vector& v) { return v.mean(); }

// Composite Gauss-Legendre nodes on [lo, hi] with raw (unnormalized) weights.
struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

Rule composite_rule(double lo, double hi, int panels) {
  using G = boost::math::quadrature::gauss<double, 12>;
  Rule r;
  const double width = (hi - lo) / panels;
  for (int p = 0; p < panels; ++p) {
    const double a = lo + p * width;
    const double mid = a + 0.5 * width;
    const double half = 0.5 * width;
    for (std::size_t k = 0; k < G::abscissa().size(); ++k) {
      for (double sign : {-1.0, 1.0}) {
        r.nodes.push_back(mid + sign * half * G::abscissa()[k]);
        r.weights.push_back(half * G::weights()[k]);
      }
    }
  }
  return r;
}

const Rule& rule_pm2() {
  static const Rule r = composite_rule(-2.0, 2.0, 8);
  return r;
}

const Rule& rule_unit() {
  static const Rule r = composite_rule(0.0, 1.0, 8);
  return r;
}

void gaussian_weights(const Rule& base, double mean, double sd, std::vector<double>& nodes,
                      std::vector<double>& weights) {
  nodes = base.nodes;
  weights.resize(base.nodes.size());
  double total = 0.0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const double z = (nodes[k] - mean) / sd;
    weights[k] = base.weights[k] * std::exp(-0.5 * z * z);
    total += weights[k];
  }
  for (double& w : weights) w /= total;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

double sample_truncated_normal(Rng& rng, double mean, double sd, double lo, double hi) {
  for (;;) {
    const double x = rng.normal(mean, sd);
    if (x >= lo && x <= hi) return x;
  }
}

double ConditionallyIndependentScenario::integrate_block(int j, double x0, const double*,
                                                         const Integrand& f) const {
  thread_local std::vector<double> nodes, weights;
  thread_local const void* cached_owner = nullptr;
  thread_local int cached_j = -1;
  thread_local double cached_x0 = kNaN;
  if (cached_owner != this || cached_j != j || cached_x0 != x0) {
    block_rule(j, x0, nodes, weights);
    cached_owner = this;
    cached_j = j;
    cached_x0 = x0;
  }
  // The integrand may itself integrate (and refill the cache), so iterate over copies.
  const std::vector<double> n = nodes;
  const std::vector<double> w = weights;
  double total = 0.0;
  for (std::size_t k = 0; k < n.size(); ++k) total += w[k] * f(n[k]);
  return total;
}

double Scenario1::sample_x0(Rng& rng) const { return sample_truncated_normal(rng, 0.0, 1.0, -2.0, 2.0); }

double Scenario1::sample_block(int, double x0, const double*, Rng& rng) const {
  return sample_truncated_normal(rng, x0, 0.9, -2.0, 2.0);
}

double Scenario1::outcome_mean(double x0, double x1, double x2) const {
  return logistic(0.15 * x0 + 1.2 * x1 + 1.2 * x2 + 8.0 * std::sin(2.0 * x1) * std::sin(2.0 * x2) / 2.2);
}

void Scenario1::block_rule(int, double x0, std::vector<double>& nodes, std::vector<double>& weights) const {
  gaussian_weights(rule_pm2(), x0, 0.9, nodes, weights);
}

double Scenario2Like::sample_x0(Rng& rng) const { return rng.uniform(); }

double Scenario2Like::sample_block(int, double, const double*, Rng& rng) const { return rng.uniform(); }

double Scenario2Like::outcome_mean(double x0, double x1, double x2) const {
  const double eta = 2.5 * (x0 - 0.5) + 3.0 * (x1 - 0.5) + 3.0 * (x2 - 0.5) +
                     4.0 * std::sin(2.0 * std::numbers::pi * x1) * (x2 - 0.5) + 2.0 * (x0 - 0.5) * (x1 - 0.5);
  return logistic(eta / 3.0);
}

void Scenario2Like::block_rule(int, double, std::vector<double>& nodes, std::vector<double>& weights) const {
  nodes = rule_unit().nodes;
  weights = rule_unit().weights;
}

double NoiseTestsScenario::sample_block(int, double, const double*, Rng& rng) const {
  return sample_truncated_normal(rng, 0.0, 1.0, -2.0, 2.0);
}

double NoiseTestsScenario::outcome_mean(double x0, double, double) const { return logistic(1.5 * x0); }

void NoiseTestsScenario::block_rule(int, double, std::vector<double>& nodes, std::vector<double>& weights) const {
  gaussian_weights(rule_pm2(), 0.0, 1.0, nodes, weights);
}

double DuplicateTestScenario::sample_block(int, double x0, const double* other, Rng& rng) const {
  if (other) return *other;
  return sample_truncated_normal(rng, x0, 0.9, -2.0, 2.0);
}

double DuplicateTestScenario::outcome_mean(double x0, double x1, double) const {
  return logistic(0.15 * x0 + 1.5 * x1);
}

double DuplicateTestScenario::integrate_block(int j, double x0, const double* other, const Integrand& f) const {
  if (other) return f(*other);
  return Scenario1::integrate_block(j, x0, nullptr, f);
}

std::unique_ptr<Scenario> make_scenario(std::string_view name) {
  if (name == "scenario1" || name == "S1") return std::make_unique<Scenario1>();
  if (name == "scenario2_like" || name == "S2-like" || name == "S2") return std::make_unique<Scenario2Like>();
  if (name == "noise_tests") return std::make_unique<NoiseTestsScenario>();
  if (name == "duplicate_test") return std::make_unique<DuplicateTestScenario>();
  throw ConfigError("unknown scenario '" + std::string(name) + "'");
}

Dataset generate_full(const Scenario& scenario, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw EmptyData("cannot generate an empty dataset");
  Rng rng(derive_seed(seed, {0x5CE4A510}));
  std::vector<Record> records(n);
  for (Record& r : records) {
    const double x0 = scenario.sample_x0(rng);
    const double x1 = scenario.sample_block(1, x0, nullptr, rng);
    const double x2 = scenario.sample_block(2, x0, &x1, rng);
    r.x0 = Vector::Constant(1, x0);
    r.x1 = Vector::Constant(1, x1);
    r.x2 = Vector::Constant(1, x2);
    r.y = rng.bernoulli(scenario.outcome_mean(x0, x1, x2)) ? 1.0 : 0.0;
    r.path = {1, 2};
  }
  return Dataset(std::move(records), scenario.dims(), OutcomeKind::binary);
}

Dataset generate_scenario1(std::size_t n, std::uint64_t seed) { return generate_full(Scenario1(), n, seed); }

Dataset generate_scenario2_like(std::size_t n, std::uint64_t seed) {
  return generate_full(Scenario2Like(), n, seed);
}

// ---------------------------------------------------------------------------
// Behavior policy
// ---------------------------------------------------------------------------

std::array<double, 3> BehaviorPolicy::stage1(const Vector& x0) const {
  const double m = mean_of(x0);
  const double s1 = a1 + b1 * m;
  const double s2 = a2 + b2 * m;
  const double top = std::max({0.0, s1, s2});
  const double e0 = std::exp(-top), e1 = std::exp(s1 - top), e2 = std::exp(s2 - top);
  const double z = e0 + e1 + e2;
  return {e0 / z, e1 / z, e2 / z};
}

double BehaviorPolicy::continue_prob(int, const Vector& x0, const Vector& xj) const {
  return logistic(alpha + beta * mean_of(xj) + gamma * mean_of(x0));
}

void BehaviorPolicy::check_positivity(const Scenario& scenario) const {
  const auto [lo, hi] = scenario.support();
  const int points = 401;
  auto in_bounds = [&](double p) { return p >= bound && p <= 1.0 - bound; };
  for (int a = 0; a < points; ++a) {
    const Vector x0 = Vector::Constant(1, lo + (hi - lo) * a / (points - 1));
    for (double p : stage1(x0)) {
      if (!in_bounds(p)) {
        throw ConfigError("first-stage behavior probability " + std::to_string(p) + " at x0=" +
                          std::to_string(x0[0]) + " leaves [" + std::to_string(bound) + ", " +
                          std::to_string(1.0 - bound) + "]");
      }
    }
    const int inner = gamma == 0.0 ? 1 : points;
    for (int b = 0; b < points; ++b) {
      const Vector xj = Vector::Constant(1, lo + (hi - lo) * b / (points - 1));
      for (int c = 0; c < inner; ++c) {
        const double p = continue_prob(1, gamma == 0.0 ? x0 : Vector::Constant(1, lo + (hi - lo) * c / (points - 1)), xj);
        if (!in_bounds(p)) {
          throw ConfigError("second-stage behavior probability " + std::to_string(p) + " leaves [" +
                            std::to_string(bound) + ", " + std::to_string(1.0 - bound) + "]");
        }
      }
    }
  }
}

BehaviorPolicy BehaviorPolicy::uninformative() {
  BehaviorPolicy b;
  b.a1 = b.b1 = b.a2 = b.b2 = 0.0;
  b.alpha = 0.0;
  b.beta = 0.0;
  b.gamma = 0.0;
  return b;
}

ObservedData apply_behavior_policy(const Dataset& full, const BehaviorPolicy& behavior, std::uint64_t seed) {
  if (!full.fully_observed()) throw MissingBlock("the behavior policy needs fully observed input");
  Rng rng(derive_seed(seed, {0xBE4A7105}));
  const std::size_t n = full.size();
  PropensityValues truth;
  truth.stage1.resize(n);
  truth.stage2.assign(n, kNaN);
  std::vector<Record> out(n);
  auto check = [&](double p, std::size_t i) {
    if (behavior.enforce_bound && (p < behavior.bound || p > 1.0 - behavior.bound)) {
      throw ConfigError("behavior probability " + std::to_string(p) + " for record " + std::to_string(i + 1) +
                        " violates the positivity bound");
    }
  };
  for (std::size_t i = 0; i < n; ++i) {
    const Record& src = full[i];
    const double u1 = rng.uniform();
    const double u2 = rng.uniform();
    const auto p1 = behavior.stage1(src.x0);
    for (double p : p1) check(p, i);
    truth.stage1[i] = p1;
    const int s1 = u1 < p1[0] ? 0 : (u1 < p1[0] + p1[1] ? 1 : 2);
    int s2 = 0;
    if (s1 != 0) {
      const double pc = behavior.continue_prob(s1, src.x0, *src.block(s1));
      check(pc, i);
      truth.stage2[i] = pc;
      s2 = u2 < pc ? other_test(s1) : 0;
    }
    Record& r = out[i];
    r.x0 = src.x0;
    r.y = src.y;
    r.path = {s1, s2};
    if (s1 == 1 || s2 == 1) r.x1 = src.x1;
    if (s1 == 2 || s2 == 2) r.x2 = src.x2;
  }
  return {Dataset(std::move(out), full.dims(), full.outcome()), std::move(truth)};
}

void write_propensities_csv(const std::filesystem::path& path, const PropensityValues& truth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "pi0_0,pi0_1,pi0_2,pi_continue\n";
  for (std::size_t i = 0; i < truth.stage1.size(); ++i) {
    out << format_double(truth.stage1[i][0]) << ',' << format_double(truth.stage1[i][1]) << ','
        << format_double(truth.stage1[i][2]) << ',';
    if (std::isfinite(truth.stage2[i])) out << format_double(truth.stage2[i]);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Exact oracle quantities
// ---------------------------------------------------------------------------

double expected_cross_entropy(double q, double m) {
  return q * prediction_loss(1.0, m) + (1.0 - q) * prediction_loss(0.0, m);
}

namespace {

double m_single(const Scenario& sc, int j, double x0, double xj) {
  const double* other = &xj;
  if (j == 1) return sc.integrate_block(2, x0, other, [&](double x2) { return sc.outcome_mean(x0, xj, x2); });
  return sc.integrate_block(1, x0, other, [&](double x1) { return sc.outcome_mean(x0, x1, xj); });
}

double m_baseline(const Scenario& sc, double x0) {
  return sc.integrate_block(1, x0, nullptr, [&](double x1) { return m_single(sc, 1, x0, x1); });
}

double stage2_contrast_scalar(const Scenario& sc, const CostSchedule& costs, int j, double x0, double xj, double mj) {
  const int jc = other_test(j);
  const double gain = sc.integrate_block(jc, x0, &xj, [&](double xjc) {
    const double q = j == 1 ? sc.outcome_mean(x0, xj, xjc) : sc.outcome_mean(x0, xjc, xj);
    return expected_cross_entropy(q, q) - expected_cross_entropy(q, mj);
  });
  return gain + costs.test_cost(jc);
}

double q_star_scalar(const Scenario& sc, const CostSchedule& costs, int j, double x0, double xj) {
  const double mj = m_single(sc, j, x0, xj);
  const double delta = stage2_contrast_scalar(sc, costs, j, x0, xj, mj);
  return expected_cross_entropy(mj, mj) + costs.test_cost(j) + std::min(0.0, delta);
}

void require_dim(const Vector& v, Eigen::Index d, const char* what) {
  if (v.size() != d) throw DimMismatch(std::string(what) + " has the wrong dimension");
}

}  // namespace

double true_mean(const Scenario& sc, InformationState s, const Vector& f) {
  switch (s) {
    case InformationState::S0: require_dim(f, 1, "x0"); return m_baseline(sc, f[0]);
    case InformationState::S1only: require_dim(f, 2, "(x0, x1)"); return m_single(sc, 1, f[0], f[1]);
    case InformationState::S2only: require_dim(f, 2, "(x0, x2)"); return m_single(sc, 2, f[0], f[1]);
    case InformationState::S12: require_dim(f, 3, "(x0, x1, x2)"); return sc.outcome_mean(f[0], f[1], f[2]);
  }
  return kNaN;
}

Vector TrueCoreModels::predict(InformationState s, const Matrix& X) const {
  Vector out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] = true_mean(scenario_, s, X.row(i).transpose());
  return out;
}

double exact_stage2_contrast(const Scenario& sc, const CostSchedule& costs, int j, const Vector& xj) {
  require_dim(xj, 2, "X_j");
  return stage2_contrast_scalar(sc, costs, j, xj[0], xj[1], m_single(sc, j, xj[0], xj[1]));
}

double exact_q_star(const Scenario& sc, const CostSchedule& costs, int j, const Vector& xj) {
  require_dim(xj, 2, "X_j");
  return q_star_scalar(sc, costs, j, xj[0], xj[1]);
}

double exact_stage1_contrast(const Scenario& sc, const CostSchedule& costs, int j, const Vector& x0) {
  require_dim(x0, 1, "x0");
  const double x = x0[0];
  const double m0 = m_baseline(sc, x);
  const double q = sc.integrate_block(j, x, nullptr, [&](double xj) { return q_star_scalar(sc, costs, j, x, xj); });
  return q - expected_cross_entropy(m0, m0);
}

OraclePolicy::OraclePolicy(const Scenario& scenario, CostSchedule costs)
    : scenario_(scenario), costs_(costs), dims_(scenario.dims()) {}

int OraclePolicy::decide0(const Vector& x0) const {
  return rule_stage0(exact_stage1_contrast(scenario_, costs_, 1, x0), exact_stage1_contrast(scenario_, costs_, 2, x0),
                     costs_);
}

int OraclePolicy::decide_stage2(int j, const Vector& xj) const {
  return rule_stage2(exact_stage2_contrast(scenario_, costs_, j, xj), j);
}

double OraclePolicy::predict(InformationState s, const Vector& features) const {
  return true_mean(scenario_, s, features);
}

// ---------------------------------------------------------------------------
// Monte Carlo oracle tables
// ---------------------------------------------------------------------------

namespace {

struct Accumulator {
  double sum = 0.0;
  double sumsq = 0.0;
  std::size_t n = 0;
  double shift = kNaN;

  void add(double v) {
    if (std::isnan(shift)) shift = v;
    const double d = v - shift;
    sum += d;
    sumsq += d * d;
    ++n;
  }
  OracleCell cell() const {
    OracleCell c;
    c.count = n;
    if (n == 0) return c;
    const double m = sum / static_cast<double>(n);
    c.mean = shift + m;
    const double var = n > 1 ? (sumsq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1) : 0.0;
    c.se = std::sqrt(std::max(var, 0.0) / static_cast<double>(n));
    return c;
  }
};

nlohmann::json cells_to_json(const std::vector<OracleCell>& cells) {
  std::vector<double> mean, se;
  std::vector<std::size_t> count;
  for (const auto& c : cells) {
    mean.push_back(c.mean);
    se.push_back(c.se);
    count.push_back(c.count);
  }
  return {{"mean", mean}, {"se", se}, {"count", count}};
}

std::vector<OracleCell> cells_from_json(const nlohmann::json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto se = j.at("se").get<std::vector<double>>();
  const auto count = j.at("count").get<std::vector<std::size_t>>();
  if (mean.size() != se.size() || mean.size() != count.size()) throw SchemaError("ragged oracle table");
  std::vector<OracleCell> out(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) out[i] = {mean[i], se[i], count[i]};
  return out;
}

std::string stage2_key(int j) { return std::to_string(other_test(j)) + "|" + std::to_string(j); }
std::string stage1_key(int j) { return std::to_string(j) + "|0"; }

}  // namespace

std::pair<double, double> OracleTables::interpolate_stage2(int j, double x0, double xj) const {
  const auto& cells = stage2_contrast.at(static_cast<std::size_t>(j - 1));
  const std::size_t P = grid.size();
  if (P < 2 || cells.size() != P * P) throw Error("stage-2 oracle table is empty");
  auto locate = [&](double x, std::size_t& a, double& t) {
    const double lo = grid.front(), hi = grid.back();
    const double u = std::clamp((x - lo) / (hi - lo), 0.0, 1.0) * static_cast<double>(P - 1);
    a = std::min(static_cast<std::size_t>(u), P - 2);
    t = u - static_cast<double>(a);
  };
  std::size_t a, b;
  double s, t;
  locate(x0, a, s);
  locate(xj, b, t);
  auto at = [&](std::size_t r, std::size_t c) -> const OracleCell& { return cells[r * P + c]; };
  const double w00 = (1 - s) * (1 - t), w01 = (1 - s) * t, w10 = s * (1 - t), w11 = s * t;
  const double mean = w00 * at(a, b).mean + w01 * at(a, b + 1).mean + w10 * at(a + 1, b).mean + w11 * at(a + 1, b + 1).mean;
  const double se = w00 * at(a, b).se + w01 * at(a, b + 1).se + w10 * at(a + 1, b).se + w11 * at(a + 1, b + 1).se;
  return {mean, se};
}

nlohmann::json OracleTables::to_json() const {
  nlohmann::json j;
  j["format"] = "costq-oracle";
  j["version"] = 1;
  j["scenario"] = scenario;
  j["costs"] = {costs.c1(), costs.c2()};
  j["grid"] = grid;
  j["mc_samples"] = mc_samples;
  j["seed"] = seed;
  for (int t : {1, 2}) {
    const auto u = static_cast<std::size_t>(t - 1);
    j["stage2"][stage2_key(t)] = {{"contrast", cells_to_json(stage2_contrast[u])},
                                  {"q_star", cells_to_json(q_star[u])},
                                  {"action", stage2_action[u]}};
    if (!stage1_contrast[u].empty()) j["stage1"][stage1_key(t)] = cells_to_json(stage1_contrast[u]);
  }
  if (!optimal_value.empty()) {
    j["optimal_value"] = cells_to_json(optimal_value);
    j["stage0_action"] = stage0_action;
  }
  return j;
}

OracleTables OracleTables::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "costq-oracle") throw SchemaError("not an oracle table file");
    OracleTables t;
    t.scenario = j.at("scenario").get<std::string>();
    const auto c = j.at("costs").get<std::vector<double>>();
    if (c.size() != 2) throw SchemaError("oracle costs must have two entries");
    t.costs = CostSchedule(c[0], c[1]);
    t.grid = j.at("grid").get<std::vector<double>>();
    t.mc_samples = j.at("mc_samples").get<std::size_t>();
    t.seed = j.at("seed").get<std::uint64_t>();
    for (int k : {1, 2}) {
      const auto u = static_cast<std::size_t>(k - 1);
      const auto& s2 = j.at("stage2").at(stage2_key(k));
      t.stage2_contrast[u] = cells_from_json(s2.at("contrast"));
      t.q_star[u] = cells_from_json(s2.at("q_star"));
      t.stage2_action[u] = s2.at("action").get<std::vector<int>>();
      if (j.contains("stage1")) t.stage1_contrast[u] = cells_from_json(j.at("stage1").at(stage1_key(k)));
    }
    if (j.contains("optimal_value")) {
      t.optimal_value = cells_from_json(j.at("optimal_value"));
      t.stage0_action = j.at("stage0_action").get<std::vector<int>>();
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed oracle table: ") + e.what());
  }
}

OracleTables oracle_tables(const Scenario& sc, const CostSchedule& costs, const GridSpec& spec,
                           std::size_t mc_samples, std::uint64_t seed, bool include_stage1, int jobs) {
  if (spec.points < 2) throw ConfigError("oracle grid needs at least 2 points per dimension");
  if (mc_samples < 2) throw ConfigError("oracle cells need at least 2 draws");
  const auto [slo, shi] = sc.support();
  const double lo = spec.lo.value_or(slo);
  const double hi = spec.hi.value_or(shi);
  if (lo < slo || hi > shi || !(lo < hi)) throw ConfigError("oracle grid must lie inside the scenario support");

  OracleTables t;
  t.scenario = sc.name();
  t.costs = costs;
  t.mc_samples = mc_samples;
  t.seed = seed;
  const auto P = static_cast<std::size_t>(spec.points);
  for (std::size_t a = 0; a < P; ++a) t.grid.push_back(lo + (hi - lo) * static_cast<double>(a) / static_cast<double>(P - 1));

  const double c12 = costs.c1() + costs.c2();
  for (int j : {1, 2}) {
    const auto u = static_cast<std::size_t>(j - 1);
    t.stage2_contrast[u].resize(P * P);
    t.q_star[u].resize(P * P);
    t.stage2_action[u].resize(P * P);
    parallel_for(P * P, jobs, [&](std::size_t cell) {
      const double x0 = t.grid[cell / P];
      const double xj = t.grid[cell % P];
      Rng rng(derive_seed(seed, {0x57A6E2, static_cast<std::uint64_t>(j), cell}));
      const double mj = m_single(sc, j, x0, xj);
      std::vector<double> draws(mc_samples), ej(mc_samples);
      Accumulator acc;
      for (std::size_t d = 0; d < mc_samples; ++d) {
        const double xjc = sc.sample_block(other_test(j), x0, &xj, rng);
        const double q = j == 1 ? sc.outcome_mean(x0, xj, xjc) : sc.outcome_mean(x0, xjc, xj);
        const double y = rng.bernoulli(q) ? 1.0 : 0.0;
        const double e12 = prediction_loss(y, q) + c12;
        ej[d] = prediction_loss(y, mj) + costs.test_cost(j);
        draws[d] = e12 - ej[d];
        acc.add(draws[d]);
      }
      const OracleCell contrast = acc.cell();
      const bool go = contrast.mean < 0.0;
      Accumulator qa;
      for (std::size_t d = 0; d < mc_samples; ++d) qa.add(ej[d] + (go ? draws[d] : 0.0));
      t.stage2_contrast[u][cell] = contrast;
      t.q_star[u][cell] = qa.cell();
      t.stage2_action[u][cell] = rule_stage2(contrast.mean, j);
    });
  }

  if (include_stage1) {
    for (int j : {1, 2}) t.stage1_contrast[static_cast<std::size_t>(j - 1)].resize(P);
    t.optimal_value.resize(P);
    t.stage0_action.resize(P);
    parallel_for(P * 2, jobs, [&](std::size_t task) {
      const std::size_t a = task / 2;
      const int j = static_cast<int>(task % 2) + 1;
      const double x0 = t.grid[a];
      Rng rng(derive_seed(seed, {0x57A6E1, static_cast<std::uint64_t>(j), a}));
      const double m0 = m_baseline(sc, x0);
      Accumulator acc;
      for (std::size_t d = 0; d < mc_samples; ++d) {
        const double xj = sc.sample_block(j, x0, nullptr, rng);
        const double xjc = sc.sample_block(other_test(j), x0, &xj, rng);
        const double q = j == 1 ? sc.outcome_mean(x0, xj, xjc) : sc.outcome_mean(x0, xjc, xj);
        const double y = rng.bernoulli(q) ? 1.0 : 0.0;
        const double mj = m_single(sc, j, x0, xj);
        const double delta = stage2_contrast_scalar(sc, costs, j, x0, xj, mj);
        const double e0 = prediction_loss(y, m0);
        const double e_j = prediction_loss(y, mj) + costs.test_cost(j);
        const double e12 = prediction_loss(y, q) + c12;
        acc.add((delta < 0.0 ? e12 : e_j) - e0);
      }
      t.stage1_contrast[static_cast<std::size_t>(j - 1)][a] = acc.cell();
    });
    for (std::size_t a = 0; a < P; ++a) {
      const double m0 = m_baseline(sc, t.grid[a]);
      const OracleCell& d1 = t.stage1_contrast[0][a];
      const OracleCell& d2 = t.stage1_contrast[1][a];
      const int action = rule_stage0(d1.mean, d2.mean, costs);
      const OracleCell* chosen = action == 1 ? &d1 : (action == 2 ? &d2 : nullptr);
      t.stage0_action[a] = action;
      t.optimal_value[a] = {expected_cross_entropy(m0, m0) + (chosen ? chosen->mean : 0.0), chosen ? chosen->se : 0.0,
                            mc_samples};
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Misspecification plans
// ---------------------------------------------------------------------------

MisspecSetting misspec_from_string(std::string_view name) {
  if (name == "A") return MisspecSetting::A;
  if (name == "B") return MisspecSetting::B;
  if (name == "C") return MisspecSetting::C;
  throw ConfigError("unknown misspecification setting '" + std::string(name) + "'");
}

std::string_view to_string(MisspecSetting setting) {
  switch (setting) {
    case MisspecSetting::A: return "A";
    case MisspecSetting::B: return "B";
    case MisspecSetting::C: return "C";
  }
  return "?";
}

void MisspecPlan::apply(CostqConfig& config) const {
  if (propensity_stage1) config.propensity_stage1 = *propensity_stage1;
  if (propensity_stage2) config.propensity_stage2 = *propensity_stage2;
  if (aux_contrast) config.aux_contrast = *aux_contrast;
}

MisspecPlan nuisance_misspec(MisspecSetting setting) {
  MisspecPlan plan;
  plan.setting = setting;
  if (setting == MisspecSetting::B) {
    LearnerConfig p1 = default_propensity_learner(3);
    p1.degree = 0;
    LearnerConfig p2 = default_propensity_learner(2);
    p2.degree = 0;
    plan.propensity_stage1 = p1;
    plan.propensity_stage2 = p2;
  } else if (setting == MisspecSetting::C) {
    LearnerConfig aux = default_contrast_learner();
    aux.degree = 0;
    plan.aux_contrast = aux;
  }
  return plan;
}

}  // namespace costq
