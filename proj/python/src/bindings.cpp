#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include <fmt/format.h>

#include "../../src/cli/io.hpp"
#include "canard/errors.hpp"
#include "canard/expr.hpp"
#include "canard/model_io.hpp"

namespace py = pybind11;
using namespace canard;
using canard::cli::json;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

ModelSpec load(const std::optional<std::string>& path) { return load_model(path ? *path : bundled_model_path()); }

Vec initial_state(const ModelSpec& spec, const std::optional<Vec>& y0) {
  if (!y0) return spec.steady_state(-60.0);
  if (y0->size() != static_cast<Eigen::Index>(spec.dim()))
    throw ConfigError(fmt::format("y0 has length {}, model has {}", y0->size(), spec.dim()));
  return *y0;
}

IntegratorOptions tolerances(double rel_tol, double abs_tol) {
  IntegratorOptions io;
  io.rel_tol = rel_tol;
  io.abs_tol = abs_tol;
  return io;
}

py::dict simulate(const ModelSpec& spec, double J, double t0, double t1, std::optional<Vec> y0, double dt,
                  double rel_tol, double abs_tol) {
  Trajectory tr;
  {
    py::gil_scoped_release nogil;
    tr = integrate(ModelSystem(spec, J), initial_state(spec, y0), t0, t1, tolerances(rel_tol, abs_tol),
                   {EventSpec::apex()});
  }
  std::vector<double> ts;
  if (dt > 0)
    for (double t = t0; t <= t1 + 1e-9 * dt; t = t0 + static_cast<double>(ts.size()) * dt) ts.push_back(std::min(t, t1));
  else
    ts = tr.times();
  Mat y(static_cast<Eigen::Index>(ts.size()), static_cast<Eigen::Index>(spec.dim()));
  for (std::size_t i = 0; i < ts.size(); ++i)
    y.row(static_cast<Eigen::Index>(i)) = (dt > 0 ? tr.at(ts[i]) : tr.state(i)).transpose();
  Mat ev(static_cast<Eigen::Index>(tr.events.size()), static_cast<Eigen::Index>(spec.dim()) + 1);
  for (std::size_t k = 0; k < tr.events.size(); ++k) {
    ev(static_cast<Eigen::Index>(k), 0) = tr.events[k].t;
    ev.row(static_cast<Eigen::Index>(k)).tail(static_cast<Eigen::Index>(spec.dim())) = tr.events[k].y.transpose();
  }
  py::dict out;
  out["t"] = Vec(Eigen::Map<const Vec>(ts.data(), static_cast<Eigen::Index>(ts.size())));
  out["y"] = y;
  out["apex"] = ev;
  out["names"] = spec.state_names();
  return out;
}

py::object regime(const ModelSpec& spec, double J, double t1, std::optional<Vec> y0) {
  RegimeReport r;
  {
    py::gil_scoped_release nogil;
    r = classify_regime(integrate(ModelSystem(spec, J), initial_state(spec, y0), 0.0, t1, {}, {EventSpec::apex()}));
  }
  return to_py(cli::to_json(r));
}

py::object fastbif(const ModelSpec& spec, double J, double m_lo, double m_hi) {
  FastDiagramOptions o;
  o.m_lo = m_lo;
  o.m_hi = m_hi;
  FastDiagram d;
  {
    py::gil_scoped_release nogil;
    d = fast_bifurcation(spec, J, o);
  }
  json eq = json::array();
  for (const auto& br : d.equilibria) {
    json pts = json::array(), bifs = json::array();
    for (const auto& p : br.points)
      pts.push_back({{"M", p.param}, {"x", cli::to_json(p.x)}, {"stability", to_string(p.stability)}});
    for (const auto& b : br.bifurcations) bifs.push_back({{"kind", b.kind}, {"M", b.param}, {"V", b.x[0]}});
    eq.push_back({{"points", pts}, {"bifurcations", bifs}});
  }
  json cyc = nullptr;
  if (d.cycles) {
    json pts = json::array(), bifs = json::array();
    for (const Cycle& c : d.cycles->cycles)
      pts.push_back({{"M", c.param},
                     {"T", c.period},
                     {"Vmin", c.v_min},
                     {"Vmax", c.v_max},
                     {"stability", to_string(c.stability)},
                     {"multipliers", cli::to_json(c.multipliers)}});
    for (const auto& b : d.cycles->bifurcations)
      bifs.push_back({{"kind", b.kind}, {"M", b.param}, {"T", b.cycle.period}, {"suspected", b.suspected}});
    cyc = {{"points", pts}, {"bifurcations", bifs}};
  }
  return to_py({{"J", J}, {"equilibria", eq}, {"cycles", cyc}, {"note", d.note}});
}

py::dict poincare(const ModelSpec& spec, double J, std::size_t n, std::size_t transient, double warmup) {
  PoincareSeries s;
  {
    py::gil_scoped_release nogil;
    const Trajectory warm = integrate(ModelSystem(spec, J), spec.steady_state(-60.0), 0.0, warmup);
    s = poincare_series(spec, J, warm.final_state(), n, transient);
  }
  Vec t(static_cast<Eigen::Index>(s.size())), v(t.size()), m(t.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    t[i] = s.samples[k].t;
    v[i] = s.v(k);
    m[i] = s.m(k);
  }
  py::dict out;
  out["J"] = J;
  out["t"] = t;
  out["V"] = v;
  out["M"] = m;
  out["complete"] = s.complete;
  out["note"] = s.note;
  out["attractor"] =
      s.size() >= AttractorOptions{}.min_samples ? to_string(classify_map_attractor(s).kind) : std::string("unknown");
  return out;
}

py::object torus(const ModelSpec& spec, double a, double b, double tol) {
  TorusOptions o;
  o.tol = tol;
  TorusLocation loc;
  {
    py::gil_scoped_release nogil;
    loc = locate_torus_bifurcation(spec, a, b, o);
  }
  return to_py(cli::to_json(loc));
}

py::object criticality(const ModelSpec& spec, double a, double b) {
  CriticalityFit fit;
  {
    py::gil_scoped_release nogil;
    fit = torus_criticality(spec, locate_torus_bifurcation(spec, a, b));
  }
  return to_py(cli::to_json(fit));
}

py::tuple run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code = 0;
  {
    py::gil_scoped_release nogil;
    code = cli::run_command(args, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_canard, m) {
  m.doc() = "Slow-fast analysis of the reduced Purkinje cell model";

  auto base = py::register_exception<Error>(m, "CanardError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<IncompleteResult>(m, "IncompleteResult", base.ptr());

  py::class_<Expr>(m, "Expr")
      .def("eval", &Expr::eval, py::arg("V"))
      .def("derivative", &Expr::derivative)
      .def("__str__", &Expr::str)
      .def("__repr__", [](const Expr& e) { return "Expr('" + e.str() + "')"; });
  m.def("parse_expr", [](const std::string& s) { return parse(s); }, py::arg("text"));

  py::class_<ModelSpec>(m, "Model")
      .def_property_readonly("name", &ModelSpec::name)
      .def_property_readonly("dim", &ModelSpec::dim)
      .def_property_readonly("state_names", &ModelSpec::state_names)
      .def_property_readonly("slow", &ModelSpec::slow)
      .def("rhs", [](const ModelSpec& s, const Vec& y, double J) { return s.eval_rhs(y, J); }, py::arg("y"),
           py::arg("J"))
      .def("jacobian", [](const ModelSpec& s, const Vec& y, double J) { return s.jacobian(y, J); }, py::arg("y"),
           py::arg("J"))
      .def("steady_state", &ModelSpec::steady_state, py::arg("V"))
      .def("with_conductance", &ModelSpec::with_conductance, py::arg("current"), py::arg("g"))
      .def("to_json", [](const ModelSpec& s) { return model_to_json(s); });

  m.def("load_model", &load, py::arg("path") = py::none());
  m.def("bundled_model_path", &bundled_model_path);
  m.def("simulate", &simulate, py::arg("model"), py::arg("J"), py::arg("t0") = 0.0, py::arg("t1") = 1000.0,
        py::arg("y0") = py::none(), py::arg("dt") = 0.0, py::arg("rel_tol") = 1e-8, py::arg("abs_tol") = 1e-10);
  m.def("classify", &regime, py::arg("model"), py::arg("J"), py::arg("t1") = 8000.0, py::arg("y0") = py::none());
  m.def("fast_bifurcation", &fastbif, py::arg("model"), py::arg("J"), py::arg("m_lo") = 0.0, py::arg("m_hi") = 1.0);
  m.def("poincare", &poincare, py::arg("model"), py::arg("J"), py::arg("n") = 500, py::arg("transient") = 200,
        py::arg("warmup") = 3000.0);
  m.def("locate_torus", &torus, py::arg("model"), py::arg("a"), py::arg("b"), py::arg("tol") = 1e-4);
  m.def("torus_criticality", &criticality, py::arg("model"), py::arg("a"), py::arg("b"));
  m.def("run_command", &run, py::arg("args"));
}
