#include "costq/config.hpp"

#include "costq/baselines.hpp"
#include "costq/dataset_io.hpp"

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace costq {

namespace {

class TableReader {
 public:
  TableReader(const toml::table& table, std::string prefix, std::string source)
      : table_(table), prefix_(std::move(prefix)), source_(std::move(source)) {}

  [[noreturn]] void fail(const toml::node* node, const std::string& key, const std::string& message) const {
    std::ostringstream os;
    os << source_;
    const auto* where = node ? node : &static_cast<const toml::node&>(table_);
    if (where->source().begin.line > 0) os << ':' << where->source().begin.line;
    os << ": " << qualified(key) << ": " << message;
    throw ConfigError(os.str());
  }

  template <typename F>
  void check(const std::string& key, F&& body) const {
    try {
      body();
    } catch (const ConfigError& e) {
      fail(table_.get(key), key, e.what());
    }
  }

  const toml::node* find(const std::string& key) {
    seen_.insert(key);
    return table_.get(key);
  }

  void read(const std::string& key, double& out) {
    if (const auto* n = find(key)) out = as_double(n, key);
  }

  void read(const std::string& key, int& out) {
    if (const auto* n = find(key)) out = static_cast<int>(as_int(n, key));
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (const auto* n = find(key)) out = as_count(n, key);
  }

  void read(const std::string& key, bool& out) {
    if (const auto* n = find(key)) {
      if (!n->is_boolean()) fail(n, key, "expected a boolean");
      out = n->as_boolean()->get();
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const auto* n = find(key)) out = as_string(n, key);
  }

  template <typename T>
  void read_list(const std::string& key, std::vector<T>& out) {
    const auto* n = find(key);
    if (!n) return;
    const auto* arr = n->as_array();
    if (!arr) fail(n, key, "expected an array");
    out.clear();
    for (const auto& item : *arr) {
      if constexpr (std::is_same_v<T, double>) {
        out.push_back(as_double(&item, key));
      } else if constexpr (std::is_same_v<T, std::string>) {
        out.push_back(as_string(&item, key));
      } else {
        out.push_back(static_cast<T>(as_count(&item, key)));
      }
    }
  }

  std::optional<TableReader> sub(const std::string& key) {
    const auto* n = find(key);
    if (!n) return std::nullopt;
    const auto* t = n->as_table();
    if (!t) fail(n, key, "expected a table");
    return TableReader(*t, qualified(key), source_);
  }

  void finish() const {
    for (const auto& [k, node] : table_) {
      const std::string key(k.str());
      if (!seen_.count(key)) fail(&node, key, "unknown key");
    }
  }

 private:
  std::string qualified(const std::string& key) const {
    if (key.empty()) return prefix_;
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

  double as_double(const toml::node* n, const std::string& key) const {
    if (n->is_floating_point()) return n->as_floating_point()->get();
    if (n->is_integer()) return static_cast<double>(n->as_integer()->get());
    fail(n, key, "expected a number");
  }

  std::int64_t as_int(const toml::node* n, const std::string& key) const {
    if (!n->is_integer()) fail(n, key, "expected an integer");
    return n->as_integer()->get();
  }

  std::uint64_t as_count(const toml::node* n, const std::string& key) const {
    const auto v = as_int(n, key);
    if (v < 0) fail(n, key, "expected a nonnegative integer");
    return static_cast<std::uint64_t>(v);
  }

  std::string as_string(const toml::node* n, const std::string& key) const {
    if (!n->is_string()) fail(n, key, "expected a string");
    return n->as_string()->get();
  }

  const toml::table& table_;
  std::string prefix_;
  std::string source_;
  std::set<std::string> seen_;
};

void read_learner(TableReader& r, LearnerConfig& c) {
  std::string kind(to_string(c.kind));
  r.read("kind", kind);
  try {
    c.kind = learner_kind_from_string(kind);
  } catch (const ConfigError& e) {
    r.fail(nullptr, "kind", e.what());
  }
  r.read("degree", c.degree);
  r.read("ridge", c.ridge);
  r.read("num_classes", c.num_classes);
  r.read("bandwidth", c.bandwidth);
  r.read("seed", c.seed);
  std::string method(to_string(c.optimizer.method));
  r.read("optimizer", method);
  try {
    c.optimizer.method = optimizer_from_string(method);
  } catch (const ConfigError& e) {
    r.fail(nullptr, "optimizer", e.what());
  }
  r.read("initial_step", c.optimizer.initial_step);
  r.read("max_iters", c.optimizer.max_iters);
  r.read("grad_tol", c.optimizer.grad_tol);
  r.finish();
  r.check("", [&] { c.validate(); });
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

std::string toml_double(double v) {
  std::string s = format_double(v);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

template <typename T, typename F>
std::string toml_list(const std::vector<T>& items, F format) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += format(items[i]);
  }
  return out + "]";
}

void write_learner(std::ostream& os, const std::string& name, const LearnerConfig& c) {
  os << "\n[learners." << name << "]\n"
     << "kind = " << quoted(std::string(to_string(c.kind))) << '\n'
     << "degree = " << c.degree << '\n'
     << "ridge = " << toml_double(c.ridge) << '\n'
     << "num_classes = " << c.num_classes << '\n'
     << "bandwidth = " << toml_double(c.bandwidth) << '\n'
     << "seed = " << c.seed << '\n'
     << "optimizer = " << quoted(std::string(to_string(c.optimizer.method))) << '\n'
     << "initial_step = " << toml_double(c.optimizer.initial_step) << '\n'
     << "max_iters = " << c.optimizer.max_iters << '\n'
     << "grad_tol = " << toml_double(c.optimizer.grad_tol) << '\n';
}

}  // namespace

CostSchedule RunConfig::resolved_costs() const {
  if (costs) return *costs;
  return make_scenario(scenario)->default_costs();
}

void RunConfig::validate() const {
  make_scenario(scenario);
  if (settings.empty()) throw ConfigError("settings: at least one setting is required");
  for (const auto& s : settings) misspec_from_string(s);
  if (n.empty()) throw ConfigError("n: at least one sample size is required");
  for (auto v : n) {
    if (v == 0) throw ConfigError("n: sample sizes must be positive");
  }
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (methods.empty()) throw ConfigError("methods: at least one method is required");
  for (const auto& m : methods) {
    if (std::find(kMethodNames.begin(), kMethodNames.end(), m) == kMethodNames.end()) {
      throw ConfigError("methods: unknown method '" + m + "'");
    }
  }
  if (costs && (costs->c1() < 0.0 || costs->c2() < 0.0)) throw ConfigError("costs: must be nonnegative");
  if (test_size == 0) throw ConfigError("test_size: must be positive");
  if (jobs < 0) throw ConfigError("jobs: must be nonnegative");
  if (budget.lambdas.empty()) throw ConfigError("budget.lambdas: grid is empty");
  for (double l : budget.lambdas) {
    if (!(l >= 0.0)) throw ConfigError("budget.lambdas: values must be nonnegative");
  }
  if (budget.target && !(*budget.target >= 0.0)) throw ConfigError("budget.target: must be nonnegative");
  try {
    costq.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("costq: ") + e.what());
  }
}

RunConfig parse_run_config(std::string_view text, std::string_view source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << source << ':' << e.source().begin.line << ": " << e.description();
    throw ConfigError(os.str());
  }

  RunConfig c;
  TableReader r(root, "", std::string(source));
  r.read("scenario", c.scenario);
  r.check("scenario", [&] { make_scenario(c.scenario); });
  r.read_list("settings", c.settings);
  r.check("settings", [&] {
    for (const auto& s : c.settings) misspec_from_string(s);
  });
  r.read_list("n", c.n);
  r.check("n", [&] {
    for (auto v : c.n) {
      if (v == 0) throw ConfigError("sample sizes must be positive");
    }
  });
  r.read_list("seeds", c.seeds);
  r.read_list("methods", c.methods);
  r.check("methods", [&] {
    for (const auto& m : c.methods) {
      if (std::find(kMethodNames.begin(), kMethodNames.end(), m) == kMethodNames.end()) {
        throw ConfigError("unknown method '" + m + "'");
      }
    }
  });
  std::vector<double> costs;
  r.read_list("costs", costs);
  if (!costs.empty()) {
    if (costs.size() != 2) r.fail(r.find("costs"), "costs", "expected [c1, c2]");
    r.check("costs", [&] {
      if (costs[0] < 0.0 || costs[1] < 0.0) throw ConfigError("must be nonnegative");
    });
    c.costs = CostSchedule(costs[0], costs[1]);
  }
  r.read("test_size", c.test_size);
  r.check("test_size", [&] {
    if (c.test_size == 0) throw ConfigError("must be positive");
  });
  r.read("output", c.output);
  r.read("jobs", c.jobs);
  r.check("jobs", [&] {
    if (c.jobs < 0) throw ConfigError("must be nonnegative");
  });

  if (auto t = r.sub("costq")) {
    t->read("folds", c.costq.folds);
    t->check("folds", [&] {
      if (c.costq.folds < 2) throw ConfigError("must be >= 2");
    });
    t->read("clip", c.costq.clip);
    t->check("clip", [&] {
      if (!(c.costq.clip > 0.0 && c.costq.clip < 0.5)) throw ConfigError("must lie in (0, 0.5)");
    });
    t->read("nested_stage2", c.costq.nested_stage2);
    t->finish();
  }
  if (auto t = r.sub("learners")) {
    const std::pair<const char*, LearnerConfig*> roles[] = {{"core", &c.costq.core},
                                                             {"propensity_stage1", &c.costq.propensity_stage1},
                                                             {"propensity_stage2", &c.costq.propensity_stage2},
                                                             {"aux_contrast", &c.costq.aux_contrast},
                                                             {"dr_contrast", &c.costq.dr_contrast}};
    for (const auto& [name, learner] : roles) {
      if (auto l = t->sub(name)) read_learner(*l, *learner);
    }
    t->finish();
  }
  if (auto t = r.sub("behavior")) {
    auto& b = c.behavior;
    t->read("a1", b.a1);
    t->read("b1", b.b1);
    t->read("a2", b.a2);
    t->read("b2", b.b2);
    t->read("alpha", b.alpha);
    t->read("beta", b.beta);
    t->read("gamma", b.gamma);
    t->read("bound", b.bound);
    t->read("enforce_bound", b.enforce_bound);
    t->finish();
  }
  if (auto t = r.sub("budget")) {
    t->read_list("lambdas", c.budget.lambdas);
    t->check("lambdas", [&] {
      if (c.budget.lambdas.empty()) throw ConfigError("grid is empty");
      for (double l : c.budget.lambdas) {
        if (!(l >= 0.0)) throw ConfigError("values must be nonnegative");
      }
    });
    double target = -1.0;
    if (t->find("target")) {
      t->read("target", target);
      t->check("target", [&] {
        if (!(target >= 0.0)) throw ConfigError("must be nonnegative");
      });
      c.budget.target = target;
    }
    t->finish();
  }
  r.finish();

  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(source) + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.string());
}

std::string to_toml(const RunConfig& c) {
  std::ostringstream os;
  const auto str = [](const std::string& s) { return quoted(s); };
  const auto num = [](auto v) { return std::to_string(v); };
  os << "# resolved costq configuration\n"
     << "scenario = " << quoted(c.scenario) << '\n'
     << "settings = " << toml_list(c.settings, str) << '\n'
     << "n = " << toml_list(c.n, num) << '\n'
     << "seeds = " << toml_list(c.seeds, num) << '\n'
     << "methods = " << toml_list(c.methods, str) << '\n';
  const CostSchedule costs = c.resolved_costs();
  os << "costs = [" << toml_double(costs.c1()) << ", " << toml_double(costs.c2()) << "]\n"
     << "test_size = " << c.test_size << '\n'
     << "output = " << quoted(c.output) << '\n'
     << "jobs = " << c.jobs << '\n';

  os << "\n[costq]\n"
     << "folds = " << c.costq.folds << '\n'
     << "clip = " << toml_double(c.costq.clip) << '\n'
     << "nested_stage2 = " << (c.costq.nested_stage2 ? "true" : "false") << '\n';

  write_learner(os, "core", c.costq.core);
  write_learner(os, "propensity_stage1", c.costq.propensity_stage1);
  write_learner(os, "propensity_stage2", c.costq.propensity_stage2);
  write_learner(os, "aux_contrast", c.costq.aux_contrast);
  write_learner(os, "dr_contrast", c.costq.dr_contrast);

  const auto& b = c.behavior;
  os << "\n[behavior]\n"
     << "a1 = " << toml_double(b.a1) << '\n'
     << "b1 = " << toml_double(b.b1) << '\n'
     << "a2 = " << toml_double(b.a2) << '\n'
     << "b2 = " << toml_double(b.b2) << '\n'
     << "alpha = " << toml_double(b.alpha) << '\n'
     << "beta = " << toml_double(b.beta) << '\n'
     << "gamma = " << toml_double(b.gamma) << '\n'
     << "bound = " << toml_double(b.bound) << '\n'
     << "enforce_bound = " << (b.enforce_bound ? "true" : "false") << '\n';

  os << "\n[budget]\n"
     << "lambdas = " << toml_list(c.budget.lambdas, [](double v) { return toml_double(v); }) << '\n';
  if (c.budget.target) os << "target = " << toml_double(*c.budget.target) << '\n';
  return os.str();
}

}  // namespace costq
