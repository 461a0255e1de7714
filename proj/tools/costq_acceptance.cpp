#include "costq/baselines.hpp"
#include "costq/commands.hpp"
#include "costq/dr_engine.hpp"
#include "costq/evaluation.hpp"
#include "costq/learners.hpp"
#include "costq/loss.hpp"
#include "costq/parallel.hpp"
#include "costq/rng.hpp"
#include "costq/simgen.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;
using namespace costq;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::uint64_t> seeds_1_to(std::uint64_t k) {
  std::vector<std::uint64_t> s(k);
  std::iota(s.begin(), s.end(), 1);
  return s;
}

std::string join_values(const std::vector<double>& v, int precision = 4) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt::format("{:.{}f}", v[i], precision);
  return out;
}

Vector pair_vec(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

RunConfig scenario1_config() {
  RunConfig c;
  c.scenario = "scenario1";
  c.jobs = 0;
  return c;
}

// 1. Pseudo-outcome double robustness -----------------------------------------------------

struct BinCheck {
  int violations = 0;
  double worst_z = 0.0;
};

BinCheck binned_phi_vs_oracle(const ObservedData& obs, const std::vector<double>& phi, const Scenario& sc,
                              const CostSchedule& costs) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < obs.data.size(); ++i) {
    if (obs.data[i].path.s1 == 1) rows.push_back(i);
  }
  std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
    return (*obs.data[a].x1)[0] < (*obs.data[b].x1)[0];
  });
  BinCheck out;
  const int bins = 10;
  for (int b = 0; b < bins; ++b) {
    const std::size_t lo = rows.size() * static_cast<std::size_t>(b) / bins;
    const std::size_t hi = rows.size() * static_cast<std::size_t>(b + 1) / bins;
    std::vector<double> p, o;
    for (std::size_t k = lo; k < hi; ++k) {
      const Record& r = obs.data[rows[k]];
      p.push_back(phi[rows[k]]);
      o.push_back(exact_stage2_contrast(sc, costs, 1, pair_vec(r.x0[0], (*r.x1)[0])));
    }
    const double mp = pairwise_mean(p), mo = pairwise_mean(o);
    double ss = 0.0;
    for (double v : p) ss += (v - mp) * (v - mp);
    const double se = std::sqrt(ss / static_cast<double>(p.size() - 1) / static_cast<double>(p.size()));
    const double z = std::abs(mp - mo) / se;
    out.worst_z = std::max(out.worst_z, z);
    if (z > 3.0) ++out.violations;
  }
  return out;
}

Outcome criterion1() {
  const Scenario1 sc;
  const CostSchedule costs = sc.default_costs();
  const ObservedData obs = apply_behavior_policy(generate_full(sc, 20000, 101), BehaviorPolicy{}, 102);
  const TrueCoreModels truth(sc);
  CostqConfig cfg;
  cfg.jobs = resolve_jobs(0);

  NuisanceInjection a;
  a.core = &truth;
  a.stage1_propensity = obs.truth.stage1;
  a.stage2_propensity = obs.truth.stage2;
  a.stage2_aux = [](int, const Vector&) { return 0.0; };
  const auto fit_a = learn_policy(obs.data, costs, cfg, a);
  const BinCheck ca = binned_phi_vs_oracle(obs, fit_a.diagnostics.pseudo.stage2, sc, costs);

  NuisanceInjection b;
  b.core = &truth;
  b.stage1_propensity = obs.truth.stage1;
  b.stage2_propensity = std::vector<double>(obs.data.size(), 0.5);
  b.stage2_aux = [&](int j, const Vector& xj) { return exact_stage2_contrast(sc, costs, j, xj); };
  const auto fit_b = learn_policy(obs.data, costs, cfg, b);
  const BinCheck cb = binned_phi_vs_oracle(obs, fit_b.diagnostics.pseudo.stage2, sc, costs);

  return {ca.violations == 0 && cb.violations == 0,
          fmt::format("true propensities + zero aux: {} of 10 bins beyond 3 SE (max |z| {:.2f}); "
                      "constant 0.5 propensity + oracle aux: {} of 10 (max |z| {:.2f})",
                      ca.violations, ca.worst_z, cb.violations, cb.worst_z)};
}

// 2. Contraction -------------------------------------------------------------------------

Outcome criterion2() {
  Rng rng(2024);
  std::size_t scalar_violations = 0;
  for (int i = 0; i < 1000000; ++i) {
    const double scale = std::pow(10.0, rng.uniform() * 8.0 - 4.0);
    const double a = rng.normal(0.0, scale), b = rng.normal(0.0, scale);
    scalar_violations += std::abs(std::min(0.0, a) - std::min(0.0, b)) > std::abs(a - b);
  }

  const Scenario1 sc;
  const CostSchedule costs = sc.default_costs();
  const ObservedData obs = apply_behavior_policy(generate_full(sc, 3200, 201), BehaviorPolicy{}, 202);
  const auto fit = learn_policy(obs.data, costs, CostqConfig{});
  const auto& pt = fit.diagnostics.pseudo;
  std::size_t checked = 0, record_violations = 0;
  double max_excess = 0.0;
  for (std::size_t i = 0; i < obs.data.size(); ++i) {
    const Record& r = obs.data[i];
    if (r.path.s1 == 0) continue;
    const int j = r.path.s1;
    const double ej = fit.diagnostics.losses.at(i, single_test_state(j));
    const double star = exact_stage2_contrast(sc, costs, j, pair_vec(r.x0[0], (*r.block(j))[0]));
    const double q_hat = pt.qtilde[i];
    const double q_star = continuation_value(ej, star);
    ++checked;
    const double excess = std::abs(q_hat - q_star) - std::abs(pt.fold_contrast_stage2[i] - star);
    max_excess = std::max(max_excess, excess);
    record_violations += excess > 1e-12 * (1.0 + std::abs(ej));
  }
  return {scalar_violations == 0 && record_violations == 0 && checked > 0,
          fmt::format("{} violations in 1e6 random pairs; {} violations over {} records with an observed first test "
                      "(max excess {:.1e})",
                      scalar_violations, record_violations, checked, max_excess)};
}

// 3. Weight normalization ----------------------------------------------------------------

std::pair<double, double> mean_se(const std::vector<double>& v) {
  const double m = pairwise_mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()))};
}

Outcome criterion3() {
  const Scenario1 sc;
  const ObservedData obs = apply_behavior_policy(generate_full(sc, 20000, 301), BehaviorPolicy{}, 302);
  bool pass = true;
  std::string detail;
  for (int j : {1, 2}) {
    std::vector<double> w1, w2;
    for (std::size_t i = 0; i < obs.data.size(); ++i) {
      const Record& r = obs.data[i];
      w1.push_back(r.path.s1 == j ? 1.0 / obs.truth.stage1[i][static_cast<std::size_t>(j)] : 0.0);
      if (r.path.s1 == j) w2.push_back(r.path.s2 != 0 ? 1.0 / obs.truth.stage2[i] : 0.0);
    }
    const auto [m1, se1] = mean_se(w1);
    const auto [m2, se2] = mean_se(w2);
    pass = pass && std::abs(m1 - 1.0) <= 3.0 * se1 && std::abs(m2 - 1.0) <= 3.0 * se2;
    detail += fmt::format("{}stage 1 (test {}): {:.4f} +- {:.4f}; stage 2 after test {}: {:.4f} +- {:.4f}",
                          j == 1 ? "" : "; ", j, m1, se1, j, m2, se2);
  }
  return {pass, detail};
}

// 4. Gradient checks ---------------------------------------------------------------------

Outcome criterion4() {
  double worst[3] = {0.0, 0.0, 0.0};
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(400 + s);
    const int n = 15 + static_cast<int>(s % 10);
    const int p = 1 + static_cast<int>(s % 3);
    Matrix X(n, p);
    Vector t(n), yb(n), y3(n);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < p; ++k) X(i, k) = rng.normal(0, 1);
      t[i] = rng.normal(0, 1);
      yb[i] = rng.bernoulli(0.5) ? 1 : 0;
      y3[i] = rng.categorical(std::array<double, 3>{1, 1, 1});
    }
    LearnerConfig base;
    base.degree = 1 + static_cast<int>(s % 3);
    base.ridge = s % 2 ? 0.05 : 1e-3;
    base.seed = s;
    LearnerConfig lin = base, lg = base, sm = base;
    lin.kind = LearnerKind::linear;
    lg.kind = LearnerKind::logistic;
    sm.kind = LearnerKind::softmax;
    sm.num_classes = 3;
    worst[0] = std::max(worst[0], gradient_check(lin, X, t));
    worst[1] = std::max(worst[1], gradient_check(lg, X, yb));
    worst[2] = std::max(worst[2], gradient_check(sm, X, y3));
  }
  const bool pass = worst[0] <= 1e-6 && worst[1] <= 1e-6 && worst[2] <= 1e-6;
  return {pass, fmt::format("max relative error over 20 instances: linear {:.2e}, logistic {:.2e}, softmax {:.2e}",
                            worst[0], worst[1], worst[2])};
}

// 5. Consistency trend -------------------------------------------------------------------

double stage2_grid_rmse(const ContrastPolicy& p, const Scenario& sc, const CostSchedule& costs) {
  double ss = 0.0;
  int count = 0;
  for (int a = 0; a <= 10; ++a) {
    for (int b = 0; b <= 10; ++b) {
      const Vector xj = pair_vec(-1.5 + 0.3 * a, -1.5 + 0.3 * b);
      const double d = p.contrast_stage2(1, xj) - exact_stage2_contrast(sc, costs, 1, xj);
      ss += d * d;
      ++count;
    }
  }
  return std::sqrt(ss / count);
}

Outcome criterion5() {
  const Scenario1 sc;
  const RunConfig rc = scenario1_config();
  const CostSchedule costs = rc.resolved_costs();
  const std::vector<std::size_t> sizes = {400, 1600, 6400};
  const auto seeds = seeds_1_to(10);
  std::vector<double> medians;
  for (std::size_t n : sizes) {
    std::vector<double> rmse(seeds.size());
    parallel_for(seeds.size(), resolve_jobs(0), [&](std::size_t k) {
      const auto cell = simulate_cell(rc, n, seeds[k]);
      const auto fit = learn_policy(cell.observed.data, costs, method_config(rc, "A", seeds[k]));
      rmse[k] = stage2_grid_rmse(fit.policy, sc, costs);
    });
    medians.push_back(median(rmse));
  }
  const bool pass = medians[0] > medians[1] && medians[1] > medians[2];
  return {pass, fmt::format("median grid RMSE at n = 400, 1600, 6400: {}", join_values(medians))};
}

// 6. Ordering under contrast misspecification ---------------------------------------------

Outcome criterion6() {
  RunConfig rc = scenario1_config();
  rc.settings = {"C"};
  rc.n = {3200};
  rc.seeds = seeds_1_to(10);
  rc.methods = {"costq", "only_complete", "one_time"};
  rc.test_size = 5000;
  const CompareResult result = run_compare(rc);
  if (!result.failures.empty()) return {false, "failed runs: " + result.failures.front()};
  std::map<std::string, std::vector<double>> loss;
  for (const auto& row : result.rows) loss[row.report.method].push_back(row.report.total_loss);
  const double cq = median(loss["costq"]), oc = median(loss["only_complete"]), ot = median(loss["one_time"]);
  return {cq <= oc && cq <= ot,
          fmt::format("median total loss: costq {:.5f}, only_complete {:.5f}, one_time {:.5f}", cq, oc, ot)};
}

// 7. Value estimator ---------------------------------------------------------------------

Outcome criterion7() {
  const RunConfig rc = scenario1_config();
  const CostSchedule costs = rc.resolved_costs();

  const auto cell0 = simulate_cell(rc, 3200, 1);
  const auto stop_fit = learn_policy(cell0.observed.data, CostSchedule(1e6, 1e6), method_config(rc, "A", 1));
  std::vector<double> e0;
  for (std::size_t i = 0; i < cell0.observed.data.size(); ++i) {
    e0.push_back(stop_fit.diagnostics.losses.at(i, InformationState::S0));
  }
  const bool all_stop = std::all_of(stop_fit.diagnostics.fold_d0.begin(), stop_fit.diagnostics.fold_d0.end(),
                                    [](int a) { return a == 0; });
  const double stop_gap = std::abs(stop_fit.diagnostics.value_estimate - pairwise_mean(e0));

  const auto seeds = seeds_1_to(10);
  const Dataset fresh = generate_full(Scenario1(), 20000, 0x7F7E5u);
  std::vector<double> gap(seeds.size()), vhat(seeds.size()), mc(seeds.size());
  parallel_for(seeds.size(), resolve_jobs(0), [&](std::size_t k) {
    const auto cell = simulate_cell(rc, 3200, seeds[k]);
    const auto fit = learn_policy(cell.observed.data, costs, method_config(rc, "A", seeds[k]));
    vhat[k] = fit.diagnostics.value_estimate;
    mc[k] = evaluate(fit.policy, fresh, costs).total_loss;
    gap[k] = std::abs(vhat[k] - mc[k]);
  });
  const double med = median(gap);
  return {all_stop && stop_gap <= 1e-12 && med <= 0.03,
          fmt::format("always-stop |V - mean(E0)| = {:.1e}; median |V - MC value| = {:.4f} "
                      "(median V {:.4f}, median MC value {:.4f}, per seed: {})",
                      stop_gap, med, median(vhat), median(mc), join_values(gap))};
}

// 8. Decomposition identities ------------------------------------------------------------

Outcome criterion8() {
  RunConfig rc = scenario1_config();
  rc.settings = {"A"};
  rc.n = {800};
  rc.seeds = {1, 2};
  rc.test_size = 5000;
  const CompareResult result = run_compare(rc);
  if (!result.failures.empty()) return {false, "failed runs: " + result.failures.front()};
  double worst_total = 0.0, worst_paths = 0.0;
  bool fixed_exact = true;
  for (const auto& row : result.rows) {
    const auto& r = row.report;
    worst_total = std::max(worst_total, std::abs(r.total_loss - (r.prediction_loss + r.average_cost)));
    worst_paths = std::max(worst_paths,
                           std::abs(std::accumulate(r.path_proportions.begin(), r.path_proportions.end(), 0.0) - 1.0));
    if (r.method == "always_test_all") fixed_exact = fixed_exact && r.average_tests == 2.0;
    if (r.method == "always_stop") fixed_exact = fixed_exact && r.average_cost == 0.0;
  }
  return {worst_total <= 1e-12 && worst_paths <= 1e-12 && fixed_exact,
          fmt::format("{} reports: max |total - prediction - cost| {:.1e}, max |sum of path shares - 1| {:.1e}, "
                      "always_test_all tests = 2 and always_stop cost = 0: {}",
                      result.rows.size(), worst_total, worst_paths, fixed_exact ? "yes" : "no")};
}

// 9. Determinism -------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome criterion9() {
  const fs::path root = fs::temp_directory_path() / fmt::format("costq_acceptance9_{}", ::getpid());
  fs::remove_all(root);
  RunConfig rc = scenario1_config();
  rc.settings = {"A", "C"};
  rc.n = {400, 800};
  rc.seeds = {1, 2};
  rc.test_size = 2000;
  std::vector<std::string> outputs;
  for (int jobs : {1, 4, 4}) {
    rc.jobs = jobs;
    const fs::path out = root / fmt::format("run{}", outputs.size());
    if (cmd_compare(rc, out) != kExitOk) return {false, "compare run failed"};
    outputs.push_back(slurp(out / "results.csv"));
  }
  fs::remove_all(root);
  const bool same = outputs[0] == outputs[1] && outputs[1] == outputs[2] && !outputs[0].empty();
  return {same, fmt::format("results.csv from jobs=1, jobs=4, jobs=4 ({} bytes each): {}", outputs[0].size(),
                            same ? "byte-identical" : "different")};
}

// 10. Budget sweep -----------------------------------------------------------------------

Outcome criterion10() {
  const RunConfig rc = scenario1_config();
  const CostSchedule costs = rc.resolved_costs();
  const auto cell = simulate_cell(rc, 3200, 1);
  const Dataset test = simulate_test_set(rc, 1);
  const CostqConfig cfg = method_config(rc, "A", 1);
  const PolicyFitter fitter = [&](const CostSchedule& c) -> std::unique_ptr<Policy> {
    return std::make_unique<ContrastPolicy>(learn_policy(cell.observed.data, c, cfg).policy);
  };
  std::string detail, grid;
  int attainable_targets = 0, misses = 0;
  for (double target : {0.005, 0.010, 0.015, 0.020, 0.025}) {
    const auto sweep = budget_sweep(fitter, test, costs, rc.budget.lambdas, target, resolve_jobs(0));
    if (grid.empty()) {
      for (const auto& e : sweep.entries) {
        grid += fmt::format("{}{:g}:{:.4f}", grid.empty() ? "" : " ", e.lambda, e.report.average_cost);
      }
    }
    const bool attainable = std::any_of(sweep.entries.begin(), sweep.entries.end(), [&](const auto& e) {
      return std::abs(e.report.average_cost - target) <= 0.005;
    });
    const double realized = sweep.report.average_cost;
    const bool ok = std::abs(realized - target) <= 0.005;
    attainable_targets += attainable;
    misses += attainable && !ok;
    detail += fmt::format("{}B={:.3f}: lambda*={:g}, cost {:.4f} ({})", detail.empty() ? "" : "; ", target,
                          sweep.lambda_star, realized, attainable ? (ok ? "ok" : "off target") : "not attainable");
  }
  const bool pass = attainable_targets > 0 && misses == 0;
  detail += "; grid lambda:cost " + grid;
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks for the cost-aware Q-learning core"};
  std::vector<int> criteria;
  app.add_option("--criterion", criteria, "Criteria to run (1-10); all when omitted")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);
  if (criteria.empty()) {
    criteria.resize(10);
    std::iota(criteria.begin(), criteria.end(), 1);
  }
  const std::function<Outcome()> checks[] = {criterion1, criterion2, criterion3, criterion4, criterion5,
                                             criterion6, criterion7, criterion8, criterion9, criterion10};
  int failed = 0;
  for (int c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = checks[c - 1]();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << fmt::format("criterion {:2d} {}  ({:.1f} s)  {}", c, o.pass ? "PASS" : "FAIL", secs, o.detail)
              << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
