#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "reduction/acceptance.hpp"
#include "reduction/commands.hpp"
#include "reduction/config.hpp"
#include "reduction/errors.hpp"
#include "reduction/filtering.hpp"

namespace py = pybind11;
using namespace reduction;

namespace {

RunConfig with_overrides(const std::string& config, std::optional<std::uint64_t> seed, std::optional<std::string> mode) {
  RunConfig cfg = parse_config(config);
  if (seed) cfg.seed = *seed;
  if (mode) cfg.mode = parse_mode(*mode);
  return cfg;
}

py::array_t<double> array(const std::vector<double>& v) { return py::array_t<double>(v.size(), v.data()); }

py::dict trajectory_dict(const Trajectory& traj) {
  const std::size_t n = traj.states.size();
  const std::size_t levels = traj.level_probs.empty() ? 0 : traj.level_probs.front().size();
  std::vector<double> t(n), h(n), v(n);
  Eigen::MatrixXd pi(n, levels);
  for (std::size_t k = 0; k < n; ++k) {
    t[k] = traj.grid.time(k);
    h[k] = traj.moments[k].mean;
    v[k] = traj.moments[k].variance;
    for (std::size_t r = 0; r < levels; ++r) pi(k, r) = traj.level_probs[k][r];
  }
  py::dict out;
  out["t"] = array(t);
  out["H"] = array(h);
  out["V"] = array(v);
  out["purity"] = array(traj.purity);
  out["xi"] = array(traj.xi);
  out["W"] = array(traj.w);
  out["pi"] = pi;
  out["final_state"] = traj.states.back().matrix();
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Energy-driven state reduction: closed-form filter, integrator and ensemble checks";

  static PyObject* lab_error = py::exception<LabError>(m, "LabError").release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const LabError& e) {
      py::object err = py::handle(lab_error)(py::str(e.what()));
      err.attr("kind") = std::string(to_string(e.kind()));
      err.attr("measured") = e.measured();
      PyErr_SetObject(lab_error, err.ptr());
    }
  });

  m.def("normalize_config", [](const std::string& config) { return serialize_config(parse_config(config)); },
        py::arg("config"), "Parse and validate a JSON config; return it with every default filled in.");

  m.def(
      "simulate",
      [](const std::string& config, std::optional<std::uint64_t> seed, std::optional<std::string> mode) {
        const RunConfig cfg = with_overrides(config, seed, mode);
        const Model model = build_model(cfg);
        SimulatedPaths paths;
        {
          py::gil_scoped_release release;
          paths = simulate(cfg, model);
        }
        py::dict out;
        for (const auto& [mode_used, traj] : paths.trajectories) {
          out[py::str(std::string(to_string(mode_used)))] = trajectory_dict(traj);
        }
        return out;
      },
      py::arg("config"), py::arg("seed") = py::none(), py::arg("mode") = py::none(),
      "One realization per mode, keyed by mode name.");

  m.def(
      "ensemble_summary",
      [](const std::string& config, std::optional<std::uint64_t> seed, std::optional<std::string> mode,
         std::optional<std::size_t> paths, std::optional<std::vector<std::string>> checks) {
        RunConfig cfg = with_overrides(config, seed, mode);
        if (paths) cfg.n_paths = *paths;
        if (checks) cfg.checks = *checks;
        cfg = parse_config(serialize_config(cfg));
        const Model model = build_model(cfg);
        std::string json;
        {
          py::gil_scoped_release release;
          json = summary_json(run_ensemble(ensemble_config(cfg, model)), cfg);
        }
        return json;
      },
      py::arg("config"), py::arg("seed") = py::none(), py::arg("mode") = py::none(), py::arg("paths") = py::none(),
      py::arg("checks") = py::none(), "Run an ensemble and return the JSON summary.");

  m.def(
      "closed_form_state",
      [](const std::vector<double>& eigenvalues, const ComplexMatrix& rho0, double sigma, double hbar, double t,
         double xi) {
        const auto spec = spectral_decompose(HermitianOperator::diagonal(eigenvalues));
        return ComplexMatrix(closed_form_state(validate_density(rho0), spec, sigma, hbar, t, xi).matrix());
      },
      py::arg("eigenvalues"), py::arg("rho0"), py::arg("sigma"), py::arg("hbar"), py::arg("t"), py::arg("xi"),
      "Conditional state given the information process value xi at time t, for H = diag(eigenvalues).");

  m.def(
      "verify",
      [](const std::vector<int>& only) {
        AcceptanceOptions options;
        options.only = only;
        std::vector<CriterionResult> results;
        {
          py::gil_scoped_release release;
          results = run_acceptance(options);
        }
        py::list out;
        for (const auto& r : results) {
          py::dict d;
          d["id"] = r.id;
          d["claim"] = r.claim;
          d["measured"] = r.measured;
          d["threshold"] = r.threshold;
          d["passed"] = r.passed;
          d["seconds"] = r.seconds;
          out.append(d);
        }
        return out;
      },
      py::arg("only") = std::vector<int>{}, "Run acceptance criteria on the built-in instances.");

  m.def(
      "reference_config", [](char name) { return serialize_config(reference_instance(name)); }, py::arg("name"),
      "JSON config of built-in instance 'A', 'B' or 'C'.");
}
