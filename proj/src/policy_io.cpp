#include "costq/policy_io.hpp"

#include "costq/baselines.hpp"
#include "costq/dr_engine.hpp"

#include <fstream>

namespace costq {

namespace {

nlohmann::json dims_json(const BlockDims& d) { return {{"p0", d.p0}, {"p1", d.p1}, {"p2", d.p2}}; }

BlockDims dims_from(const nlohmann::json& j) {
  return {j.at("p0").get<int>(), j.at("p1").get<int>(), j.at("p2").get<int>()};
}

nlohmann::json labels_json(const BlockDims& d) {
  nlohmann::json out = nlohmann::json::object();
  for (int b = 0; b < 3; ++b) {
    nlohmann::json names = nlohmann::json::array();
    for (int k = 1; k <= d.of(b); ++k) names.push_back("x" + std::to_string(b) + "_" + std::to_string(k));
    out["x" + std::to_string(b)] = names;
  }
  return out;
}

nlohmann::json training_json(const TrainingInfo& t) {
  return {{"n", t.n}, {"K", t.K}, {"seed", t.seed}, {"config_hash", t.config_hash}};
}

TrainingInfo training_from(const nlohmann::json& j) {
  return {j.at("n").get<std::size_t>(), j.at("K").get<int>(), j.at("seed").get<std::uint64_t>(),
          j.at("config_hash").get<std::string>()};
}

nlohmann::json core_json(const CoreModels& core) {
  nlohmann::json out = nlohmann::json::object();
  for (auto s : kAllStates) out[std::string(to_string(s))] = core.model(s).to_json();
  return out;
}

CoreModels core_from(const nlohmann::json& j) {
  std::array<FittedModel, 4> models;
  for (auto s : kAllStates) models[static_cast<std::size_t>(s)] = FittedModel::from_json(j.at(std::string(to_string(s))));
  return CoreModels(std::move(models));
}

OutcomeKind outcome_from(const std::string& name) {
  if (name == "binary") return OutcomeKind::binary;
  if (name == "continuous") return OutcomeKind::continuous;
  throw SchemaError("unknown outcome kind '" + name + "'");
}

nlohmann::json header(const Policy& policy, const std::string& kind, OutcomeKind outcome, const CostSchedule& costs,
                      const TrainingInfo& training) {
  return {{"format", kPolicyFormat},
          {"version", kPolicyFormatVersion},
          {"kind", kind},
          {"method", policy.method()},
          {"dims", dims_json(policy.dims())},
          {"labels", labels_json(policy.dims())},
          {"outcome", std::string(to_string(outcome))},
          {"costs", {{"c1", costs.c1()}, {"c2", costs.c2()}}},
          {"tie_break", kTieBreakPolicy},
          {"training", training_json(training)}};
}

}  // namespace

nlohmann::json policy_to_json(const Policy& policy) {
  if (const auto* p = dynamic_cast<const ContrastPolicy*>(&policy)) {
    nlohmann::json j = header(policy, "contrast", p->outcome(), p->costs(), p->training());
    j["clip"] = p->clip();
    j["core"] = core_json(p->core());
    j["contrasts"] = {{"2|1", p->stage2_model(1).to_json()},
                      {"1|2", p->stage2_model(2).to_json()},
                      {"1|0", p->stage1_model(1).to_json()},
                      {"2|0", p->stage1_model(2).to_json()}};
    return j;
  }
  if (const auto* p = dynamic_cast<const OneTimePolicy*>(&policy)) {
    nlohmann::json j = header(policy, "one_time", p->outcome(), p->costs(), p->training());
    nlohmann::json losses = nlohmann::json::object();
    for (auto s : kAllStates) losses[std::string(to_string(s))] = p->state_loss_model(s).to_json();
    j["core"] = core_json(p->core());
    j["state_loss"] = losses;
    return j;
  }
  if (const auto* p = dynamic_cast<const FixedPolicy*>(&policy)) {
    nlohmann::json j = header(policy, "fixed", p->outcome(), p->costs(), p->training());
    j["rule"] = std::string(to_string(p->rule()));
    j["core"] = core_json(p->core());
    return j;
  }
  throw ConfigError("policy '" + policy.method() + "' has no serializer");
}

std::unique_ptr<Policy> policy_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kPolicyFormat) throw SchemaError("not a costq policy file");
    if (j.at("version").get<int>() != kPolicyFormatVersion) {
      throw SchemaError("unsupported policy format version " + j.at("version").dump());
    }
    const std::string kind = j.at("kind").get<std::string>();
    const BlockDims dims = dims_from(j.at("dims"));
    const OutcomeKind outcome = outcome_from(j.at("outcome").get<std::string>());
    const CostSchedule costs(j.at("costs").at("c1").get<double>(), j.at("costs").at("c2").get<double>());
    const TrainingInfo training = training_from(j.at("training"));
    CoreModels core = core_from(j.at("core"));

    if (kind == "contrast") {
      const auto& c = j.at("contrasts");
      std::array<FittedModel, 2> stage2 = {FittedModel::from_json(c.at("2|1")), FittedModel::from_json(c.at("1|2"))};
      std::array<FittedModel, 2> stage1 = {FittedModel::from_json(c.at("1|0")), FittedModel::from_json(c.at("2|0"))};
      return std::make_unique<ContrastPolicy>(j.at("method").get<std::string>(), dims, outcome, costs,
                                              j.at("clip").get<double>(), std::move(core), std::move(stage2),
                                              std::move(stage1), training);
    }
    if (kind == "one_time") {
      std::array<FittedModel, 4> losses;
      for (auto s : kAllStates) {
        losses[static_cast<std::size_t>(s)] = FittedModel::from_json(j.at("state_loss").at(std::string(to_string(s))));
      }
      return std::make_unique<OneTimePolicy>(dims, outcome, costs, std::move(core), std::move(losses), training);
    }
    if (kind == "fixed") {
      return std::make_unique<FixedPolicy>(fixed_rule_from_string(j.at("rule").get<std::string>()), dims, outcome,
                                           costs, std::move(core), training);
    }
    throw SchemaError("unknown policy kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed policy file: ") + e.what());
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("malformed policy file: ") + e.what());
  }
}

void save_policy(const std::filesystem::path& path, const Policy& policy) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << policy_to_json(policy).dump(2) << '\n';
}

std::unique_ptr<Policy> load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open policy file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("policy file " + path.string() + " is not valid JSON: " + e.what());
  }
  return policy_from_json(j);
}

nlohmann::json policy_metadata(const nlohmann::json& j) {
  nlohmann::json meta = {{"format", j.at("format")}, {"version", j.at("version")}, {"method", j.at("method")},
                         {"kind", j.at("kind")},     {"dims", j.at("dims")},       {"labels", j.at("labels")},
                         {"outcome", j.at("outcome")}, {"costs", j.at("costs")},   {"tie_break", j.at("tie_break")},
                         {"training", j.at("training")}};
  return meta;
}

}  // namespace costq
