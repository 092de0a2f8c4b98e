//! Python module mkvlab._core: measures, transport distances, particle and
//! FPE solvers for the built-in coefficient families, and the experiment runner.

#include "mkvlab/coefficients.hpp"
#include "mkvlab/cylindrical.hpp"
#include "mkvlab/error.hpp"
#include "mkvlab/experiment.hpp"
#include "mkvlab/feynman_kac.hpp"
#include "mkvlab/fpe.hpp"
#include "mkvlab/particles.hpp"
#include "mkvlab/wasserstein.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace mkv;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a)
{
  return {a.data(), a.data() + a.size()};
}

Array to_array(const std::vector<double>& v)
{
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

EmpiricalMeasure cloud(const Array& points, std::optional<Array> weights)
{
  if (points.ndim() != 1)
    throw Error("points must be a 1-D array");
  if (!weights)
    return EmpiricalMeasure::uniform(to_vector(points), 1);
  return EmpiricalMeasure(to_vector(points), to_vector(*weights), 1);
}

CoefficientSet family(const std::string& name, double lambda0, double kappa0, double sigma0)
{
  if (name == "meanfield-ou")
    return meanfield_ou_coefficients(lambda0, kappa0, sigma0).coeffs;
  if (name == "heat")
    return heat_coefficients(sigma0);
  if (name == "nldbm")
    return nldbm_coefficients(NLDBMParams::canonical());
  throw Error("unknown family '" + name + "' (meanfield-ou, heat, nldbm)");
}

} // namespace

PYBIND11_MODULE(_core, m)
{
  m.doc() = "mean-field SDE and nonlinear Fokker-Planck simulation lab";
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def(
    "wasserstein2",
    [](const Array& x, const Array& y) { return wasserstein2(cloud(x, std::nullopt), cloud(y, std::nullopt)); },
    py::arg("x"), py::arg("y"), "exact 1-D W2 between two uniform clouds");
  m.def(
    "wasserstein1",
    [](const Array& x, const Array& y) { return wasserstein1(cloud(x, std::nullopt), cloud(y, std::nullopt)); },
    py::arg("x"), py::arg("y"));
  m.def(
    "wasserstein2_to_gaussian",
    [](const Array& x, double mean, double var) { return wasserstein2_to_gaussian(cloud(x, std::nullopt), mean, var); },
    py::arg("x"), py::arg("mean"), py::arg("var"));

  m.def(
    "simulate",
    [](const Array& x0, double horizon, const std::vector<double>& record_times, const std::string& fam,
       double lambda0, double kappa0, double sigma0, double dt, std::uint64_t seed) {
      SimConfig cfg;
      cfg.n_particles = static_cast<std::size_t>(x0.size());
      cfg.dt = dt;
      cfg.seed = seed;
      cfg.record_times = record_times;
      const auto e = [&] {
        py::gil_scoped_release release;
        return simulate_mckean_vlasov(cloud(x0, std::nullopt), family(fam, lambda0, kappa0, sigma0), 0.0, horizon, cfg);
      }();
      Array paths({static_cast<py::ssize_t>(e.replicas), static_cast<py::ssize_t>(e.times.size())});
      std::copy(e.paths.begin(), e.paths.end(), paths.mutable_data());
      return py::make_tuple(to_array(e.times), paths);
    },
    py::arg("x0"), py::arg("horizon"), py::arg("record_times") = std::vector<double>{}, py::arg("family") = "meanfield-ou",
    py::arg("lambda0") = 1.0, py::arg("kappa0") = 0.0, py::arg("sigma0") = 1.0, py::arg("dt") = 1e-3,
    py::arg("seed") = 1,
    "interacting particle system from the cloud x0; returns (times, paths[particle, time])");

  m.def(
    "solve_fpe",
    [](double x_min, double x_max, double dx, const Array& u0, double horizon, const std::vector<double>& output_times,
       const std::string& fam, double lambda0, double kappa0, double sigma0, double dt) {
      const auto grid = GridSpec::covering(x_min, x_max, dx);
      if (static_cast<std::size_t>(u0.size()) != grid.cells)
        throw Error("u0 must have " + std::to_string(grid.cells) + " cell values");
      SolverConfig sc;
      sc.dt = dt;
      sc.output_times = output_times;
      const auto path = [&] {
        py::gil_scoped_release release;
        return solve_nonlinear_fpe(GridDensity1D::normalized(grid, to_vector(u0)), family(fam, lambda0, kappa0, sigma0),
                                   0.0, horizon, sc);
      }();
      Array states({static_cast<py::ssize_t>(path.states.size()), static_cast<py::ssize_t>(grid.cells)});
      auto* out = states.mutable_data();
      for (const auto& s : path.states)
        out = std::copy(s.values().begin(), s.values().end(), out);
      py::dict log;
      log["steps"] = path.log.steps;
      log["max_mass_error"] = path.log.max_mass_error;
      log["clipped_mass"] = path.log.clipped_mass;
      return py::make_tuple(to_array(path.times), states, log);
    },
    py::arg("x_min"), py::arg("x_max"), py::arg("dx"), py::arg("u0"), py::arg("horizon"),
    py::arg("output_times") = std::vector<double>{}, py::arg("family") = "meanfield-ou", py::arg("lambda0") = 1.0,
    py::arg("kappa0") = 0.0, py::arg("sigma0") = 1.0, py::arg("dt") = 1e-3,
    "nonlinear FPE on [x_min, x_max]; returns (times, densities[time, cell], conservation log)");

  m.def(
    "fk_terminal_x",
    [](double t, double T, double x, const Array& mu, double lambda0, double kappa0, double sigma0, double V,
       std::size_t replicas, double dt, std::uint64_t seed) {
      FKProblem p;
      p.coeffs = meanfield_ou_coefficients(lambda0, kappa0, sigma0).coeffs;
      p.T = T;
      p.Phi = [](std::span<const double> y, const MeasureView&) { return y[0]; };
      if (V != 0.0) {
        p.V = [V](double, std::span<const double>, const MeasureView&) { return V; };
        p.V_bound = std::abs(V);
      }
      FKConfig cfg;
      cfg.sim.n_particles = replicas;
      cfg.sim.dt = dt;
      cfg.sim.seed = seed;
      const auto cl = cloud(mu, std::nullopt);
      cfg.flow_particles = cl.size();
      const auto est = [&] {
        py::gil_scoped_release release;
        return fk_evaluate(p, t, x, cl, cfg);
      }();
      return py::make_tuple(est.value, est.stderr);
    },
    py::arg("t"), py::arg("T"), py::arg("x"), py::arg("mu"), py::arg("lambda0") = 1.0, py::arg("kappa0") = 0.0,
    py::arg("sigma0") = 1.0, py::arg("V") = 0.0, py::arg("replicas") = 2000, py::arg("dt") = 1e-2,
    py::arg("seed") = 1,
    "Feynman-Kac estimate of E[e^{V (T-t)} X_T] for mean-field OU; returns (value, stderr)");

  m.def(
    "gradient_check",
    [](std::uint64_t seed, const Array& mu) {
      const auto st = gradient_fd_study(random_cylindrical(seed), cloud(mu, std::nullopt), random_direction(seed));
      py::dict d;
      d["pairing"] = st.pairing;
      d["observed_order"] = st.observed_order;
      d["rel_error_fine"] = st.rel_error_fine;
      return d;
    },
    py::arg("seed"), py::arg("mu"));

  m.def("experiment_names", &experiment_names);
  m.def(
    "validate_config",
    [](const std::string& text) { return validate_config(nlohmann::json::parse(text, nullptr, true, true)); },
    py::arg("config_json"), "schema problems of a JSON configuration (empty when valid)");
  m.def(
    "run_experiment",
    [](const std::string& text, const std::filesystem::path& out) {
      const auto cfg = resolve_config(nlohmann::json::parse(text, nullptr, true, true));
      const auto res = [&] {
        py::gil_scoped_release release;
        return run_experiment(cfg, out);
      }();
      return py::make_tuple(res.exit_code, res.summary, res.artifacts);
    },
    py::arg("config_json"), py::arg("out_dir"), "returns (exit_code, summary, artifact names)");
}
