#include "costq/baselines.hpp"
#include "costq/commands.hpp"
#include "costq/config.hpp"
#include "costq/dr_engine.hpp"
#include "costq/evaluation.hpp"
#include "costq/parallel.hpp"
#include "costq/policy_io.hpp"
#include "costq/service.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>

namespace py = pybind11;
using namespace costq;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array block_array(const Dataset& data, int block) {
  const int p = block == 0 ? data.dims().p0 : data.dims().of(block);
  Array out({static_cast<py::ssize_t>(data.size()), static_cast<py::ssize_t>(p)});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Record& r = data[i];
    const Vector* v = block == 0 ? &r.x0 : (r.block(block) ? &*r.block(block) : nullptr);
    for (int k = 0; k < p; ++k) m(static_cast<py::ssize_t>(i), k) = v ? (*v)[k] : std::nan("");
  }
  return out;
}

py::dict to_dict(const Dataset& data) {
  py::dict d;
  d["x0"] = block_array(data, 0);
  d["x1"] = block_array(data, 1);
  d["x2"] = block_array(data, 2);
  Array y(static_cast<py::ssize_t>(data.size()));
  py::array_t<int> s1(static_cast<py::ssize_t>(data.size())), s2(static_cast<py::ssize_t>(data.size()));
  auto ym = y.mutable_unchecked<1>();
  auto s1m = s1.mutable_unchecked<1>();
  auto s2m = s2.mutable_unchecked<1>();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto k = static_cast<py::ssize_t>(i);
    ym(k) = data[i].y;
    s1m(k) = data[i].path.s1;
    s2m(k) = data[i].path.s2;
  }
  d["y"] = y;
  d["s1"] = s1;
  d["s2"] = s2;
  d["outcome"] = std::string(to_string(data.outcome()));
  return d;
}

Array matrix_of(const py::dict& d, const char* key) {
  if (!d.contains(key)) throw SchemaError(std::string("dataset is missing '") + key + "'");
  Array a = d[key].cast<Array>();
  if (a.ndim() == 1) a = a.reshape({a.shape(0), py::ssize_t{1}});
  if (a.ndim() != 2) throw SchemaError(std::string(key) + " must be a 1-d or 2-d array");
  return a;
}

Dataset from_dict(const py::dict& d) {
  const Array x0 = matrix_of(d, "x0"), x1 = matrix_of(d, "x1"), x2 = matrix_of(d, "x2");
  const Array y = d["y"].cast<Array>();
  const auto s1 = d["s1"].cast<py::array_t<int, py::array::c_style | py::array::forcecast>>();
  const auto s2 = d["s2"].cast<py::array_t<int, py::array::c_style | py::array::forcecast>>();
  const auto n = x0.shape(0);
  if (x1.shape(0) != n || x2.shape(0) != n || y.shape(0) != n || s1.shape(0) != n || s2.shape(0) != n) {
    throw DimMismatch("dataset arrays differ in length");
  }
  const BlockDims dims{static_cast<int>(x0.shape(1)), static_cast<int>(x1.shape(1)), static_cast<int>(x2.shape(1))};
  OutcomeKind outcome = OutcomeKind::binary;
  if (d.contains("outcome") && d["outcome"].cast<std::string>() == "continuous") outcome = OutcomeKind::continuous;

  const auto row = [](const Array& a, py::ssize_t i) -> std::optional<Vector> {
    auto m = a.unchecked<2>();
    Vector v(a.shape(1));
    std::size_t missing = 0;
    for (py::ssize_t k = 0; k < a.shape(1); ++k) {
      v[k] = m(i, k);
      missing += std::isnan(v[k]);
    }
    if (missing == static_cast<std::size_t>(a.shape(1)) && missing > 0) return std::nullopt;
    if (missing > 0) throw SchemaError("block is partially missing", static_cast<std::size_t>(i) + 1);
    return v;
  };
  std::vector<Record> records(static_cast<std::size_t>(n));
  auto ym = y.unchecked<1>();
  auto s1m = s1.unchecked<1>();
  auto s2m = s2.unchecked<1>();
  for (py::ssize_t i = 0; i < n; ++i) {
    Record& r = records[static_cast<std::size_t>(i)];
    auto b0 = row(x0, i);
    if (!b0) throw SchemaError("x0 is missing", static_cast<std::size_t>(i) + 1);
    r.x0 = *b0;
    r.x1 = row(x1, i);
    r.x2 = row(x2, i);
    r.y = ym(i);
    r.path = {s1m(i), s2m(i)};
  }
  return Dataset(std::move(records), dims, outcome);
}

Vector to_vector(const Array& a) {
  if (a.ndim() != 1) throw DimMismatch("expected a 1-d feature array");
  Vector v(a.shape(0));
  auto m = a.unchecked<1>();
  for (py::ssize_t k = 0; k < a.shape(0); ++k) v[k] = m(k);
  return v;
}

std::optional<Vector> to_optional(const std::optional<Array>& a) {
  if (!a) return std::nullopt;
  return to_vector(*a);
}

RunConfig run_config(const std::string& toml) { return parse_run_config(toml, "config"); }

CostSchedule costs_or(const std::optional<std::pair<double, double>>& costs, const CostSchedule& fallback) {
  return costs ? CostSchedule(costs->first, costs->second) : fallback;
}

InformationState state_from(const std::string& name) {
  for (auto s : {InformationState::S0, InformationState::S1only, InformationState::S2only, InformationState::S12}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown state '" + name + "'");
}

struct PyPolicy {
  std::shared_ptr<const Policy> policy;
  std::string json_text;

  static PyPolicy from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("policy is not valid JSON: ") + e.what());
    }
    std::shared_ptr<const Policy> p = policy_from_json(j);
    return {std::move(p), j.dump()};
  }
  static PyPolicy wrap(std::unique_ptr<Policy> p) {
    const std::string text = policy_to_json(*p).dump();
    return {std::shared_ptr<const Policy>(std::move(p)), text};
  }
  CostSchedule costs() const {
    const auto j = nlohmann::json::parse(json_text);
    return {j.at("costs").at("c1").get<double>(), j.at("costs").at("c2").get<double>()};
  }
};

}  // namespace

PYBIND11_MODULE(_costq, m) {
  m.doc() = "Native core of the costq package";

  const auto& base = py::register_exception<Error>(m, "CostqError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  m.def("version", [] { return std::string(version()); });
  m.attr("METHODS") = py::cast(std::vector<std::string>(kMethodNames.begin(), kMethodNames.end()));

  m.def(
      "simulate",
      [](std::size_t n, std::uint64_t seed, const std::string& config) {
        const RunConfig c = run_config(config);
        const SimulatedCell cell = simulate_cell(c, n, seed);
        return py::make_tuple(to_dict(cell.observed.data), to_dict(cell.full));
      },
      py::arg("n"), py::arg("seed"), py::arg("config") = "");
  m.def(
      "test_set",
      [](std::uint64_t seed, const std::string& config) { return to_dict(simulate_test_set(run_config(config), seed)); },
      py::arg("seed"), py::arg("config") = "");
  m.def(
      "default_costs",
      [](const std::string& config) {
        const CostSchedule c = run_config(config).resolved_costs();
        return std::make_pair(c.c1(), c.c2());
      },
      py::arg("config") = "");
  m.def("validate_dataset", [](const py::dict& d) { return from_dict(d).size(); });

  py::class_<PyPolicy>(m, "Policy")
      .def_static("from_json", &PyPolicy::from_json_text)
      .def("to_json", [](const PyPolicy& p) { return p.json_text; })
      .def_property_readonly("method", [](const PyPolicy& p) { return p.policy->method(); })
      .def_property_readonly("dims",
                             [](const PyPolicy& p) {
                               const auto& d = p.policy->dims();
                               return py::make_tuple(d.p0, d.p1, d.p2);
                             })
      .def_property_readonly("costs",
                             [](const PyPolicy& p) {
                               const auto c = p.costs();
                               return std::make_pair(c.c1(), c.c2());
                             })
      .def("decide0", [](const PyPolicy& p, const Array& x0) { return p.policy->decide0(to_vector(x0)); })
      .def("decide_stage2",
           [](const PyPolicy& p, int j, const Array& xj) { return p.policy->decide_stage2(j, to_vector(xj)); })
      .def("predict", [](const PyPolicy& p, const std::string& state,
                         const Array& features) { return p.policy->predict(state_from(state), to_vector(features)); })
      .def(
          "recommend",
          [](const PyPolicy& p, const std::string& state, const Array& x0, const std::optional<Array>& x1,
             const std::optional<Array>& x2) {
            return recommend(*p.policy, state_from(state), to_vector(x0), to_optional(x1), to_optional(x2)).dump();
          },
          py::arg("state"), py::arg("x0"), py::arg("x1") = py::none(), py::arg("x2") = py::none())
      .def(
          "what_if",
          [](const PyPolicy& p, const std::string& state, const Array& x0, const std::optional<Array>& x1,
             const std::optional<Array>& x2) {
            return what_if(*p.policy, p.costs(), state_from(state), to_vector(x0), to_optional(x1), to_optional(x2))
                .dump();
          },
          py::arg("state"), py::arg("x0"), py::arg("x1") = py::none(), py::arg("x2") = py::none());

  m.def(
      "fit",
      [](const std::string& method, const py::dict& data, std::optional<std::pair<double, double>> costs,
         const std::string& config, const std::string& setting, std::uint64_t seed) {
        const RunConfig c = run_config(config);
        const Dataset d = from_dict(data);
        CostqConfig cfg = method_config(c, setting, seed);
        cfg.jobs = resolve_jobs(c.jobs);
        MethodFit fit;
        {
          py::gil_scoped_release release;
          fit = fit_method(method, d, costs_or(costs, c.resolved_costs()), cfg);
        }
        return py::make_tuple(PyPolicy::wrap(std::move(fit.policy)), fit.diagnostics.dump(), fit.value_estimate);
      },
      py::arg("method"), py::arg("data"), py::arg("costs") = py::none(), py::arg("config") = "",
      py::arg("setting") = "A", py::arg("seed") = 1);

  m.def(
      "evaluate",
      [](const PyPolicy& p, const py::dict& data, std::optional<std::pair<double, double>> costs,
         const std::optional<py::dict>& train) {
        const Dataset d = from_dict(data);
        std::optional<RecallThresholds> thresholds;
        if (train) {
          const Dataset t = from_dict(*train);
          std::vector<double> labels;
          for (const auto& r : t.records()) labels.push_back(r.y);
          thresholds = recall_thresholds(training_scores(*p.policy, t), labels);
        }
        return evaluate(*p.policy, d, costs_or(costs, p.costs()), thresholds).to_json().dump();
      },
      py::arg("policy"), py::arg("data"), py::arg("costs") = py::none(), py::arg("train") = py::none());
}
