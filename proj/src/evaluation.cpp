#include "costq/evaluation.hpp"

#include "costq/dataset_io.hpp"
#include "costq/loss.hpp"
#include "costq/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace costq {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Vector concat(const Vector& a, const Vector& b) {
  Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

const Vector& revealed(const Record& record, int j) {
  const auto& block = record.block(j);
  if (!block) throw MissingBlock("evaluation needs test " + std::to_string(j) + " to be observed");
  return *block;
}

std::optional<double> optional_number(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

nlohmann::json to_json(const OperatingPoint& p) {
  return {{"threshold", p.threshold},
          {"sensitivity", p.sensitivity},
          {"specificity", p.specificity},
          {"gmean", p.gmean}};
}

OperatingPoint operating_point_from_json(const nlohmann::json& j) {
  return {j.at("threshold").get<double>(), j.at("sensitivity").get<double>(),
          j.at("specificity").get<double>(), j.at("gmean").get<double>()};
}

std::string optional_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::optional<double> parse_optional(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

}  // namespace

Trajectory apply_policy(const Policy& policy, const Record& record, const CostSchedule& costs, OutcomeKind outcome) {
  Trajectory t;
  const int first = policy.decide0(record.x0);
  if (first != 0 && first != 1 && first != 2) throw InvalidPath("first action outside {0, 1, 2}");
  Vector features = record.x0;
  if (first != 0) {
    const Vector xj = concat(record.x0, revealed(record, first));
    const int second = policy.decide_stage2(first, xj);
    if (second != 0 && second != other_test(first)) throw InvalidPath("second action is not admissible");
    t.path = {first, second};
    features = second == 0 ? xj : features_at_state(record, InformationState::S12);
  }
  t.terminal = state_of_path(t.path);
  t.prediction = policy.predict(t.terminal, features);
  t.prediction_loss = prediction_loss(record.y, t.prediction, outcome);
  t.cost = costs.cumulative(t.terminal);
  t.total = t.prediction_loss + t.cost;
  return t;
}

double auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw DimMismatch("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positives = 0.0;
  double negatives = 0.0;
  double rank_sum = 0.0;  // midranks of positives
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t k = i;
    while (k < order.size() && scores[order[k]] == scores[order[i]]) ++k;
    const double midrank = 0.5 * static_cast<double>(i + 1 + k);
    for (std::size_t m = i; m < k; ++m) {
      if (labels[order[m]] == 1.0) {
        positives += 1.0;
        rank_sum += midrank;
      } else {
        negatives += 1.0;
      }
    }
    i = k;
  }
  if (positives == 0.0 || negatives == 0.0) return kNaN;
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

double threshold_at_recall(std::span<const double> scores, std::span<const double> labels, double target) {
  if (scores.size() != labels.size()) throw DimMismatch("scores and labels differ in length");
  if (!(target > 0.0 && target <= 1.0)) throw ConfigError("target recall must lie in (0, 1]");
  std::vector<double> pos;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1.0) pos.push_back(scores[i]);
  }
  if (pos.empty()) throw NoPositives("threshold_at_recall needs at least one positive label");
  std::sort(pos.begin(), pos.end(), std::greater<>());
  const double P = static_cast<double>(pos.size());
  std::size_t k = static_cast<std::size_t>(std::ceil(target * P));
  while (k > 1 && static_cast<double>(k - 1) / P >= target) --k;
  while (static_cast<double>(k) / P < target) ++k;
  k = std::clamp<std::size_t>(k, 1, pos.size());
  return pos[k - 1];
}

OperatingPoint operating_point(std::span<const double> scores, std::span<const double> labels, double threshold) {
  if (scores.size() != labels.size()) throw DimMismatch("scores and labels differ in length");
  double tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool flagged = scores[i] >= threshold;
    if (labels[i] == 1.0) {
      (flagged ? tp : fn) += 1.0;
    } else {
      (flagged ? fp : tn) += 1.0;
    }
  }
  OperatingPoint p;
  p.threshold = threshold;
  p.sensitivity = tp + fn > 0 ? tp / (tp + fn) : kNaN;
  p.specificity = tn + fp > 0 ? tn / (tn + fp) : kNaN;
  p.gmean = std::sqrt(p.sensitivity * p.specificity);
  return p;
}

RecallThresholds recall_thresholds(std::span<const double> scores, std::span<const double> labels) {
  return {threshold_at_recall(scores, labels, 0.90), threshold_at_recall(scores, labels, 0.95)};
}

std::vector<double> training_scores(const Policy& policy, const Dataset& train) {
  std::vector<double> out(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const Record& r = train[i];
    const InformationState s = r.state();
    out[i] = policy.predict(s, features_at_state(r, s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// EvaluationReport
// ---------------------------------------------------------------------------

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json paths = nlohmann::json::object();
  for (std::size_t k = 0; k < kValidPaths.size(); ++k) paths[to_string(kValidPaths[k])] = path_proportions[k];
  nlohmann::json j = {{"method", method},
                      {"n", n},
                      {"total_loss", total_loss},
                      {"prediction_loss", prediction_loss},
                      {"average_cost", average_cost},
                      {"path_proportions", paths},
                      {"average_tests", average_tests},
                      {"auc", auc ? nlohmann::json(*auc) : nlohmann::json()},
                      {"recall90", recall90 ? costq::to_json(*recall90) : nlohmann::json()},
                      {"recall95", recall95 ? costq::to_json(*recall95) : nlohmann::json()},
                      {"value_estimate", value_estimate ? nlohmann::json(*value_estimate) : nlohmann::json()}};
  return j;
}

EvaluationReport EvaluationReport::from_json(const nlohmann::json& j) {
  EvaluationReport r;
  r.method = j.at("method").get<std::string>();
  r.n = j.at("n").get<std::size_t>();
  r.total_loss = j.at("total_loss").get<double>();
  r.prediction_loss = j.at("prediction_loss").get<double>();
  r.average_cost = j.at("average_cost").get<double>();
  for (std::size_t k = 0; k < kValidPaths.size(); ++k) {
    r.path_proportions[k] = j.at("path_proportions").at(to_string(kValidPaths[k])).get<double>();
  }
  r.average_tests = j.at("average_tests").get<double>();
  r.auc = optional_number(j, "auc");
  if (j.contains("recall90") && !j.at("recall90").is_null()) r.recall90 = operating_point_from_json(j.at("recall90"));
  if (j.contains("recall95") && !j.at("recall95").is_null()) r.recall95 = operating_point_from_json(j.at("recall95"));
  r.value_estimate = optional_number(j, "value_estimate");
  return r;
}

std::vector<std::string> EvaluationReport::csv_columns() {
  return {"method",          "n_eval",      "total_loss",    "prediction_loss", "average_cost",
          "prop_0_0",        "prop_1_0",    "prop_2_0",      "prop_1_2",        "prop_2_1",
          "average_tests",   "auc",         "threshold90",   "sensitivity90",   "specificity90",
          "gmean90",         "threshold95", "sensitivity95", "specificity95",   "gmean95",
          "value_estimate"};
}

std::vector<std::string> EvaluationReport::csv_fields() const {
  std::vector<std::string> f = {method, std::to_string(n), format_double(total_loss), format_double(prediction_loss),
                                format_double(average_cost)};
  for (double p : path_proportions) f.push_back(format_double(p));
  f.push_back(format_double(average_tests));
  f.push_back(optional_field(auc));
  for (const auto* op : {&recall90, &recall95}) {
    if (*op) {
      for (double v : {(*op)->threshold, (*op)->sensitivity, (*op)->specificity, (*op)->gmean}) {
        f.push_back(format_double(v));
      }
    } else {
      f.insert(f.end(), 4, std::string());
    }
  }
  f.push_back(optional_field(value_estimate));
  return f;
}

EvaluationReport EvaluationReport::from_csv_fields(const std::vector<std::string>& f) {
  if (f.size() != csv_columns().size()) throw SchemaError("report row has the wrong number of fields");
  EvaluationReport r;
  r.method = f[0];
  r.n = std::stoull(f[1]);
  r.total_loss = std::stod(f[2]);
  r.prediction_loss = std::stod(f[3]);
  r.average_cost = std::stod(f[4]);
  for (std::size_t k = 0; k < 5; ++k) r.path_proportions[k] = std::stod(f[5 + k]);
  r.average_tests = std::stod(f[10]);
  r.auc = parse_optional(f[11]);
  for (std::size_t block = 0; block < 2; ++block) {
    const std::size_t base = 12 + 4 * block;
    if (f[base].empty()) continue;
    OperatingPoint p{std::stod(f[base]), std::stod(f[base + 1]), std::stod(f[base + 2]), std::stod(f[base + 3])};
    (block == 0 ? r.recall90 : r.recall95) = p;
  }
  r.value_estimate = parse_optional(f[20]);
  return r;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

EvaluationReport evaluate(const Policy& policy, const Dataset& data, const CostSchedule& costs,
                          const std::optional<RecallThresholds>& thresholds) {
  if (!data.fully_observed()) throw MissingBlock("evaluation data must be fully observed");
  if (data.size() == 0) throw EmptyData("evaluation data is empty");
  if (!(data.dims() == policy.dims())) throw DimMismatch("policy and evaluation data have different block dimensions");

  const std::size_t n = data.size();
  std::vector<Trajectory> traj(n);
  for (std::size_t i = 0; i < n; ++i) traj[i] = apply_policy(policy, data[i], costs, data.outcome());

  std::vector<double> pred_loss(n), total(n), scores(n), labels(n);
  std::array<double, 5> counts{};
  for (std::size_t i = 0; i < n; ++i) {
    pred_loss[i] = traj[i].prediction_loss;
    total[i] = traj[i].total;
    scores[i] = traj[i].prediction;
    labels[i] = data[i].y;
    counts[path_index(traj[i].path)] += 1.0;
  }

  EvaluationReport r;
  r.method = policy.method();
  r.n = n;
  r.prediction_loss = pairwise_mean(pred_loss);
  r.total_loss = pairwise_mean(total);
  // Cost and test counts take one value per path, so they are averaged through the path frequencies.
  for (std::size_t k = 0; k < 5; ++k) {
    const double share = counts[k] / static_cast<double>(n);
    const InformationState s = state_of_path(kValidPaths[k]);
    r.path_proportions[k] = share;
    if (share == 0.0) continue;
    r.average_cost += share * costs.cumulative(s);
    r.average_tests += share * tests_taken(s);
  }
  if (data.outcome() == OutcomeKind::binary) {
    const double a = auc(scores, labels);
    if (!std::isnan(a)) r.auc = a;
    if (thresholds) {
      r.recall90 = operating_point(scores, labels, thresholds->recall90);
      r.recall95 = operating_point(scores, labels, thresholds->recall95);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// budget_sweep
// ---------------------------------------------------------------------------

BudgetSweepResult budget_sweep(const PolicyFitter& fit, const Dataset& eval, const CostSchedule& costs,
                               std::span<const double> lambdas, double budget, int jobs) {
  if (lambdas.empty()) throw ConfigError("lambda grid is empty");
  if (!(budget >= 0.0)) throw ConfigError("budget must be nonnegative");
  for (double l : lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("lambda values must be finite and nonnegative");
  }

  BudgetSweepResult result;
  result.entries.resize(lambdas.size());
  parallel_for(lambdas.size(), jobs, [&](std::size_t k) {
    const auto policy = fit(costs.scaled(lambdas[k]));
    result.entries[k] = {lambdas[k], evaluate(*policy, eval, costs)};
  });

  std::size_t best = 0;
  for (std::size_t k = 1; k < result.entries.size(); ++k) {
    const double gap = std::abs(result.entries[k].report.average_cost - budget);
    const double best_gap = std::abs(result.entries[best].report.average_cost - budget);
    if (gap < best_gap || (gap == best_gap && result.entries[k].lambda < result.entries[best].lambda)) best = k;
  }
  result.selected = best;
  result.lambda_star = result.entries[best].lambda;
  result.report = result.entries[best].report;
  return result;
}

}  // namespace costq
