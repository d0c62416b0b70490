// Python extension: catalog lookup, PAF evaluation, plans and costs.
// Structured results cross the boundary as JSON text.

#include <optional>
#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pafforge/catalog.hpp"
#include "pafforge/cost.hpp"
#include "pafforge/errors.hpp"
#include "pafforge/harness.hpp"
#include "pafforge/plan.hpp"
#include "pafforge/scaling.hpp"

namespace py = pybind11;
namespace pf = pafforge;

namespace {

const pf::PafCatalog& catalog() {
  static const pf::PafCatalog c = pf::load_catalog(pf::default_catalog_path());
  return c;
}

std::string plan_json(const std::string& name) {
  const auto plan = pf::build_plan(catalog().get(name));
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& row : plan.level_trace) {
    trace.push_back({{"level", row.level}, {"variables", row.variables}});
  }
  return nlohmann::json{{"depth", plan.total_depth},
                        {"depth_per_stage", plan.depth_per_stage},
                        {"nonscalar_mults", plan.nonscalar_mults},
                        {"scalar_mults", plan.scalar_mults},
                        {"level_trace", trace}}
      .dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  py::register_exception<pf::Error>(m, "Error", PyExc_RuntimeError);

  m.def("catalog_names", [] { return catalog().names(); });
  m.def("paf_json", [](const std::string& name) { return pf::paf_to_json(catalog().get(name)).dump(); });
  m.def("plan_json", &plan_json);
  m.def("depth", [](const std::string& name) { return pf::build_plan(catalog().get(name)).total_depth; });
  m.def("sign", [](const std::string& name, double x, std::optional<int> layer) {
    return pf::eval_composite(catalog().get(name), x, layer);
  }, py::arg("name"), py::arg("x"), py::arg("layer") = py::none());
  m.def("relu", [](const std::string& name, double x, std::optional<int> layer) {
    return pf::relu_paf(catalog().get(name), x, layer);
  }, py::arg("name"), py::arg("x"), py::arg("layer") = py::none());
  m.def("maximum", [](const std::string& name, double x, double y, std::optional<int> layer) {
    return pf::max_paf(catalog().get(name), x, y, layer);
  }, py::arg("name"), py::arg("x"), py::arg("y"), py::arg("layer") = py::none());
  m.def("activation", [](const std::string& name, const std::vector<double>& values,
                         std::optional<double> scale, std::optional<int> layer) {
    const auto mode = scale ? pf::ScaleMode::fixed(*scale) : pf::ScaleMode::dynamic();
    return pf::paf_activation(catalog().get(name), values, mode, layer);
  }, py::arg("name"), py::arg("values"), py::arg("scale") = py::none(),
     py::arg("layer") = py::none());
  m.def("cost_json", [](const std::string& name) {
    return pf::cost_to_json(pf::estimate_cost(catalog().get(name))).dump();
  });
  m.def("spearman", &pf::spearman);
  m.def("report_json", [](const std::string& path) {
    return pf::report_to_json(pf::load_report(path)).dump();
  });
}
