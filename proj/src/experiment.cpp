#include "mkvlab/experiment.hpp"

#include "mkvlab/coefficients.hpp"
#include "mkvlab/cylindrical.hpp"
#include "mkvlab/ergodicity.hpp"
#include "mkvlab/feynman_kac.hpp"
#include "mkvlab/fpe.hpp"
#include "mkvlab/io.hpp"
#include "mkvlab/lift.hpp"
#include "mkvlab/particles.hpp"
#include "mkvlab/plot.hpp"
#include "mkvlab/rng.hpp"
#include "mkvlab/wasserstein.hpp"

#include <boost/version.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#ifndef MKVLAB_VERSION
#define MKVLAB_VERSION "0.0.0"
#endif

namespace mkv {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kInitialStream = 1ull << 52;
constexpr std::uint64_t kCompanionStream = (1ull << 52) + 1;

const std::vector<std::string> kFamilies = {"meanfield-ou", "heat", "nldbm", "nldbm-linear"};
const std::vector<std::string> kLawKinds = {"gaussian", "dirac"};
const std::vector<std::string> kH0 = {"one", "x", "x2", "sin", "bump"};
const std::vector<std::string> kF = {"one", "mean", "second-moment", "mean-square", "sin-product"};
const std::vector<std::string> kPhi = {"one", "x", "x2", "mean", "x-mean"};

bool one_of(const std::string& v, const std::vector<std::string>& set)
{
  return std::find(set.begin(), set.end(), v) != set.end();
}

std::string join(const std::vector<std::string>& v)
{
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i)
    s += (i ? ", " : "") + v[i];
  return s;
}

std::optional<ExperimentKind> kind_of(const std::string& name)
{
  const auto& names = experiment_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name)
      return static_cast<ExperimentKind>(i);
  return std::nullopt;
}

ojson law(const std::string& kind, double mean, double var, double at = 0.0)
{
  return ojson{{"kind", kind}, {"mean", mean}, {"var", var}, {"at", at}};
}

ojson section(ExperimentKind k)
{
  switch (k) {
  case ExperimentKind::simulate_mkv:
    return ojson{{"compare_fpe", false}, {"kde_bandwidth", 0.0}};
  case ExperimentKind::solve_fpe:
    return ojson{{"scheme", "semi-implicit"}};
  case ExperimentKind::frozen_compare:
    return ojson{{"companion", law("gaussian", -1.0, 0.3)}, {"bound_constant", 3.0}};
  case ExperimentKind::check_ck:
    return ojson{{"s", 0.0},       {"r", 0.5},         {"t", 1.0},        {"x", 0.3},
                 {"h0", "x2"},     {"F", "mean-square"}, {"quad_points", 0u}, {"mollifier", "hat"},
                 {"tolerance", 1e-5}};
  case ExperimentKind::ergodicity:
    return ojson{{"method", "moment-fixed-point"}, {"companion", law("gaussian", -1.0, 0.3)},
                 {"bootstrap", 40u},               {"window", 1.0},
                 {"max_horizon", 50.0}};
  case ExperimentKind::feynman_kac:
    return ojson{{"t", 0.0},
                 {"T", 1.0},
                 {"x", json::array({-1.0, 0.0, 1.0})},
                 {"Phi", "x"},
                 {"V", 0.0},
                 {"f", 0.0},
                 {"replicas", 4000u},
                 {"flow_backend", "particle"},
                 {"flow_particles", 10000u},
                 {"residual", false},
                 {"dt_fd", 0.05},
                 {"dx_fd", 0.05},
                 {"eps_measure", 1e-3}};
  case ExperimentKind::gradient_check:
    return ojson{{"functions", 20u}, {"atoms", 50u},       {"eps0", 4e-2},     {"levels", 3u},
                 {"fine_eps", 1e-5}, {"min_order", 1.9},   {"max_rel_error", 1e-4}};
  case ExperimentKind::validate_hypotheses:
    return ojson{{"lo", -10.0}, {"hi", 10.0}, {"samples", 10000u}};
  }
  return ojson::object();
}

// ---------------------------------------------------------------- validation

//! Empty when `got` fits the schema leaf `want`, else the requirement.
std::string leaf_mismatch(const ojson& want, const json& got)
{
  if (want.is_number_unsigned())
    return got.is_number_unsigned() || (got.is_number_integer() && got.get<std::int64_t>() >= 0)
             ? ""
             : "must be a non-negative integer";
  if (want.is_number())
    return got.is_number() ? "" : "must be a number";
  if (want.is_string())
    return got.is_string() ? "" : "must be a string";
  if (want.is_boolean())
    return got.is_boolean() ? "" : "must be true or false";
  if (want.is_array())
    return got.is_array() && !got.empty() &&
               std::all_of(got.begin(), got.end(), [](const json& v) { return v.is_number(); })
             ? ""
             : "must be a non-empty array of numbers";
  return want.is_object() && !got.is_object() ? "must be an object" : "";
}

void check_tree(const json& given, const ojson& schema, const std::string& path, std::vector<std::string>& errs)
{
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) {
      if (path.empty() && kind_of(it.key()))
        errs.push_back("section '" + it.key() + "' does not apply to experiment '" +
                       schema["experiment"].get<std::string>() + "'");
      else
        errs.push_back("unknown key '" + key + "'");
      continue;
    }
    const auto& want = schema[it.key()];
    if (const auto m = leaf_mismatch(want, it.value()); !m.empty())
      errs.push_back("'" + key + "' " + m);
    else if (want.is_object())
      check_tree(it.value(), want, key, errs);
  }
}

//! Defaults overwritten by the given values, keeping schema order.
ojson merged(const ojson& schema, const json& given)
{
  ojson out = schema;
  for (auto it = out.begin(); it != out.end(); ++it) {
    if (!given.contains(it.key()))
      continue;
    const auto& g = given[it.key()];
    if (!leaf_mismatch(it.value(), g).empty())
      continue; // reported by check_tree; keep the default so value checks still run
    if (it.value().is_object())
      it.value() = merged(it.value(), g);
    else if (it.value().is_number_float() && g.is_number())
      it.value() = g.get<double>();
    else
      it.value() = ojson::parse(g.dump());
  }
  return out;
}

void check_law(const ojson& l, const std::string& path, std::vector<std::string>& errs)
{
  const auto kind = l["kind"].get<std::string>();
  if (!one_of(kind, kLawKinds))
    errs.push_back("'" + path + ".kind' must be one of: " + join(kLawKinds));
  if (kind == "gaussian" && !(l["var"].get<double>() > 0.0))
    errs.push_back("'" + path + ".var' must be positive");
}

void check_values(const ojson& t, ExperimentKind kind, std::vector<std::string>& errs)
{
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok)
      errs.push_back(msg);
  };
  const auto& c = t["coefficients"];
  const auto family = c["family"].get<std::string>();
  need(one_of(family, kFamilies), "'coefficients.family' must be one of: " + join(kFamilies));
  if (family == "meanfield-ou" || family == "heat")
    need(c["sigma0"].get<double>() > 0.0, "'coefficients.sigma0' must be positive");
  if (family == "meanfield-ou")
    need(c["lambda0"].get<double>() >= 0.0, "'coefficients.lambda0' must be non-negative");
  check_law(t["initial"], "initial", errs);

  const auto& n = t["numerics"];
  need(n["n_particles"].get<std::uint64_t>() >= 1, "'numerics.n_particles' must be at least 1");
  need(n["dt"].get<double>() > 0.0, "'numerics.dt' must be positive");
  need(n["dx"].get<double>() > 0.0, "'numerics.dx' must be positive");
  need(n["x_max"].get<double>() > n["x_min"].get<double>(), "'numerics.x_max' must exceed 'numerics.x_min'");
  need(n["horizon"].get<double>() > 0.0, "'numerics.horizon' must be positive");
  need(n["checkpoints"].get<std::uint64_t>() >= 1, "'numerics.checkpoints' must be at least 1");
  need(n["bandwidth"].get<double>() >= 0.0, "'numerics.bandwidth' must be non-negative");

  const std::string name = to_string(kind);
  const auto& s = t[name];
  const std::string p = name + ".";
  switch (kind) {
  case ExperimentKind::simulate_mkv:
    need(s["kde_bandwidth"].get<double>() >= 0.0, "'" + p + "kde_bandwidth' must be non-negative");
    break;
  case ExperimentKind::solve_fpe:
    need(one_of(s["scheme"].get<std::string>(), {"semi-implicit", "explicit"}),
         "'" + p + "scheme' must be one of: semi-implicit, explicit");
    break;
  case ExperimentKind::frozen_compare:
    check_law(s["companion"], p + "companion", errs);
    need(s["bound_constant"].get<double>() > 0.0, "'" + p + "bound_constant' must be positive");
    break;
  case ExperimentKind::check_ck: {
    const double a = s["s"].get<double>(), r = s["r"].get<double>(), b = s["t"].get<double>();
    need(a < r && r < b, "'" + p + "s' < '" + p + "r' < '" + p + "t' must hold");
    need(one_of(s["h0"].get<std::string>(), kH0), "'" + p + "h0' must be one of: " + join(kH0));
    need(one_of(s["F"].get<std::string>(), kF), "'" + p + "F' must be one of: " + join(kF));
    need(one_of(s["mollifier"].get<std::string>(), {"hat", "one-cell"}), "'" + p + "mollifier' must be one of: hat, one-cell");
    need(s["tolerance"].get<double>() > 0.0, "'" + p + "tolerance' must be positive");
    break;
  }
  case ExperimentKind::ergodicity:
    need(one_of(s["method"].get<std::string>(), {"moment-fixed-point", "long-run"}),
         "'" + p + "method' must be one of: moment-fixed-point, long-run");
    check_law(s["companion"], p + "companion", errs);
    need(s["window"].get<double>() > 0.0, "'" + p + "window' must be positive");
    need(s["max_horizon"].get<double>() > 0.0, "'" + p + "max_horizon' must be positive");
    need(n["checkpoints"].get<std::uint64_t>() >= 2, "'numerics.checkpoints' must be at least 2 for ergodicity");
    break;
  case ExperimentKind::feynman_kac:
    need(s["t"].get<double>() <= s["T"].get<double>(), "'" + p + "t' must not exceed '" + p + "T'");
    need(one_of(s["Phi"].get<std::string>(), kPhi), "'" + p + "Phi' must be one of: " + join(kPhi));
    need(s["replicas"].get<std::uint64_t>() >= 2, "'" + p + "replicas' must be at least 2");
    need(s["flow_particles"].get<std::uint64_t>() >= 1, "'" + p + "flow_particles' must be at least 1");
    need(one_of(s["flow_backend"].get<std::string>(), {"particle", "fpe"}),
         "'" + p + "flow_backend' must be one of: particle, fpe");
    need(s["dt_fd"].get<double>() > 0.0 && s["dx_fd"].get<double>() > 0.0 && s["eps_measure"].get<double>() > 0.0,
         "'" + p + "dt_fd', 'dx_fd' and 'eps_measure' must be positive");
    break;
  case ExperimentKind::gradient_check:
    need(s["functions"].get<std::uint64_t>() >= 1, "'" + p + "functions' must be at least 1");
    need(s["atoms"].get<std::uint64_t>() >= 1, "'" + p + "atoms' must be at least 1");
    need(s["levels"].get<std::uint64_t>() >= 2, "'" + p + "levels' must be at least 2");
    need(s["eps0"].get<double>() > 0.0 && s["fine_eps"].get<double>() > 0.0,
         "'" + p + "eps0' and '" + p + "fine_eps' must be positive");
    break;
  case ExperimentKind::validate_hypotheses:
    need(s["hi"].get<double>() > s["lo"].get<double>(), "'" + p + "hi' must exceed '" + p + "lo'");
    need(s["samples"].get<std::uint64_t>() >= 1, "'" + p + "samples' must be at least 1");
    break;
  }
}

// ------------------------------------------------------------------ builders

struct Family
{
  CoefficientSet coeffs;
  std::optional<MonotonicityConstants> constants;
  std::optional<NLDBMParams> nldbm;
};

Family build_family(const ojson& c)
{
  const auto name = c["family"].get<std::string>();
  const double l0 = c["lambda0"].get<double>(), k0 = c["kappa0"].get<double>(), s0 = c["sigma0"].get<double>();
  Family f;
  if (name == "meanfield-ou") {
    const auto ou = meanfield_ou_coefficients(l0, k0, s0);
    f.coeffs = ou.coeffs;
    f.constants = ou.constants;
  } else if (name == "heat") {
    f.coeffs = heat_coefficients(s0);
    f.constants = meanfield_ou_coefficients(0.0, 0.0, s0).constants;
  } else {
    f.nldbm = name == "nldbm" ? NLDBMParams::canonical() : NLDBMParams::linear(c["b_const"].get<double>());
    f.coeffs = nldbm_coefficients(*f.nldbm);
  }
  return f;
}

GridSpec build_grid(const ojson& n)
{
  return GridSpec::covering(n["x_min"].get<double>(), n["x_max"].get<double>(), n["dx"].get<double>());
}

EmpiricalMeasure build_cloud(const ojson& l, std::size_t n, std::uint64_t seed, std::uint64_t stream)
{
  if (l["kind"].get<std::string>() == "dirac")
    return EmpiricalMeasure::dirac(l["at"].get<double>());
  const NormalStream rng(seed, stream);
  std::vector<double> x(n);
  rng.fill_normals(0, x);
  const double m = l["mean"].get<double>(), s = std::sqrt(l["var"].get<double>());
  for (double& v : x)
    v = m + s * v;
  return EmpiricalMeasure::uniform(std::move(x), 1);
}

GridDensity1D build_density(const ojson& l, const GridSpec& g)
{
  if (l["kind"].get<std::string>() == "dirac")
    return mollified_dirac(g, l["at"].get<double>(), DiracMollifier::hat);
  return GridDensity1D::gaussian(g, l["mean"].get<double>(), l["var"].get<double>());
}

//! 0, H/n, ..., H
std::vector<double> checkpoints(const ojson& n)
{
  const double H = n["horizon"].get<double>();
  const auto k = n["checkpoints"].get<std::size_t>();
  std::vector<double> t;
  for (std::size_t i = 0; i <= k; ++i)
    t.push_back(H * static_cast<double>(i) / static_cast<double>(k));
  t.back() = H;
  return t;
}

SimConfig build_sim(const ojson& tree)
{
  const auto& n = tree["numerics"];
  SimConfig s;
  s.n_particles = n["n_particles"].get<std::size_t>();
  s.dt = n["dt"].get<double>();
  s.bandwidth = n["bandwidth"].get<double>();
  s.seed = tree["seed"].get<std::uint64_t>();
  return s;
}

SolverConfig build_solver(const ojson& n)
{
  SolverConfig s;
  s.dt = n["dt"].get<double>();
  return s;
}

TestFunction h0_named(const std::string& n)
{
  if (n == "one")
    return TestFunction::constant(1.0);
  if (n == "x")
    return TestFunction::monomial(1);
  if (n == "x2")
    return TestFunction::monomial(2);
  if (n == "sin")
    return TestFunction::sine(1.0);
  return TestFunction::gaussian_bump(0.0, 1.0);
}

CylindricalFunction F_named(const std::string& n)
{
  if (n == "one")
    return CylindricalFunction::constant(1.0);
  if (n == "mean")
    return CylindricalFunction::mean();
  if (n == "second-moment")
    return CylindricalFunction::linear(TestFunction::monomial(2));
  if (n == "mean-square")
    return CylindricalFunction({TestFunction::monomial(1)}, OuterFunction::square());
  return CylindricalFunction({TestFunction::sine(1.0), TestFunction::gaussian_bump(0.0, 1.0)}, OuterFunction::product(2));
}

TerminalFn phi_named(const std::string& n)
{
  if (n == "one")
    return [](std::span<const double>, const MeasureView&) { return 1.0; };
  if (n == "x")
    return [](std::span<const double> x, const MeasureView&) { return x[0]; };
  if (n == "x2")
    return [](std::span<const double> x, const MeasureView&) { return x[0] * x[0]; };
  if (n == "mean")
    return [](std::span<const double>, const MeasureView& m) { return m.mean()[0]; };
  return [](std::span<const double> x, const MeasureView& m) { return x[0] * m.mean()[0]; };
}

ojson constants_json(const MonotonicityConstants& k)
{
  return ojson{{"K", k.K}, {"lambda", k.lambda}, {"kappa", k.kappa}, {"lambda_bar", k.lambda_bar}, {"kappa_bar", k.kappa_bar}};
}

// ---------------------------------------------------------------- experiments

struct Outcome
{
  Table results;
  ojson summary = ojson::object();
  std::vector<PlotSeries> plot;
  PlotStyle style;
  std::vector<std::pair<std::string, std::string>> extra; //!< additional files
  bool violated = false;
  std::string message;
};

Outcome run_simulate(const ojson& t)
{
  const auto fam = build_family(t["coefficients"]);
  const auto& n = t["numerics"];
  const auto& s = t["simulate-mkv"];
  auto sim = build_sim(t);
  const auto times = checkpoints(n);
  sim.record_times.assign(times.begin() + 1, times.end());
  const auto cloud = build_cloud(t["initial"], sim.n_particles, sim.seed, kInitialStream);
  const double H = n["horizon"].get<double>();
  const auto e = simulate_mckean_vlasov(cloud, fam.coeffs, 0.0, H, sim);

  const bool compare = s["compare_fpe"].get<bool>();
  Outcome o;
  o.results = Table(compare ? std::vector<std::string>{"t", "mean", "variance", "second_moment", "l1_fpe"}
                            : std::vector<std::string>{"t", "mean", "variance", "second_moment"});
  std::optional<DensityPath> path;
  const auto grid = build_grid(n);
  if (compare) {
    auto sc = build_solver(n);
    sc.output_times.assign(times.begin() + 1, times.end());
    path = solve_nonlinear_fpe(build_density(t["initial"], grid), fam.coeffs, 0.0, H, sc);
  }
  for (double tk : times) {
    const auto m = marginal(e, tk);
    const auto mo = moments(m);
    const double var = mo.covariance[0];
    std::vector<double> row{tk, mo.mean[0], var, mo.second_moment};
    if (compare) {
      const double bw = s["kde_bandwidth"].get<double>() > 0.0 ? s["kde_bandwidth"].get<double>() : default_bandwidth(m);
      row.push_back(tk == 0.0 && m.size() == 1 ? NAN : l1_distance(kde_density(m, grid, bw), path->state_at(tk)));
    }
    o.results.add(std::move(row));
  }
  o.summary["n_particles"] = sim.n_particles;
  o.summary["max_kde_sup"] = e.max_kde_sup;
  o.summary["final_mean"] = o.results.rows.back()[1];
  o.summary["final_variance"] = o.results.rows.back()[2];
  if (compare) {
    double worst = 0.0;
    for (std::size_t i = 1; i < o.results.rows.size(); ++i)
      worst = std::max(worst, o.results.rows[i][4]);
    o.summary["max_l1_fpe"] = worst;
  }
  o.plot = {{"mean", o.results.column("t"), o.results.column("mean")},
            {"variance", o.results.column("t"), o.results.column("variance")}};
  o.style.title = "particle marginal moments";
  o.style.y_label = "moment";
  o.message = "simulated " + std::to_string(sim.n_particles) + " particles to t = " + format_double(H);
  return o;
}

Outcome run_solve_fpe(const ojson& t)
{
  const auto fam = build_family(t["coefficients"]);
  const auto& n = t["numerics"];
  const auto grid = build_grid(n);
  auto sc = build_solver(n);
  const auto times = checkpoints(n);
  sc.output_times.assign(times.begin() + 1, times.end());
  sc.scheme = t["solve-fpe"]["scheme"].get<std::string>() == "explicit" ? Scheme::explicit_euler : Scheme::semi_implicit;
  const double H = n["horizon"].get<double>();
  const auto path = solve_nonlinear_fpe(build_density(t["initial"], grid), fam.coeffs, 0.0, H, sc);
  const auto weak = fpe_weak_residual(path, fam.coeffs, TestFunction::monomial(2));

  Outcome o;
  o.results = Table({"t", "mass", "mean", "variance", "weak_residual_x2"});
  Table dens({"x"});
  for (std::size_t k = 0; k < path.times.size(); ++k) {
    const auto& u = path.states[k];
    const auto mo = moments(u);
    o.results.add({path.times[k], u.mass(), mo.mean[0], mo.covariance[0], weak[k]});
    dens.columns.push_back("u" + std::to_string(k));
  }
  for (std::size_t i = 0; i < grid.cells; ++i) {
    std::vector<double> row{grid.center(i)};
    for (const auto& u : path.states)
      row.push_back(u.values()[i]);
    dens.add(std::move(row));
  }
  o.extra.emplace_back("density.csv", to_csv(dens));
  const auto& log = path.log;
  o.summary["density_times"] = path.times;
  o.summary["conservation"] = ojson{{"steps", log.steps},
                                    {"max_mass_error", log.max_mass_error},
                                    {"clipped_mass", log.clipped_mass},
                                    {"min_value", log.min_value},
                                    {"max_iterations", log.max_iterations},
                                    {"max_residual", log.max_residual},
                                    {"boundary_mass", log.boundary_mass}};
  o.summary["mass_tolerance_per_step"] = 1e-12;
  o.summary["clip_limit"] = 1e-6;
  o.violated = log.max_mass_error > 1e-12 || log.clipped_mass > 1e-6;
  o.plot = {{"mean", o.results.column("t"), o.results.column("mean")},
            {"variance", o.results.column("t"), o.results.column("variance")}};
  o.style.title = "FPE moments";
  o.style.y_label = "moment";
  o.message = o.violated ? "conservation breached: max mass error " + format_double(log.max_mass_error) +
                             ", clipped mass " + format_double(log.clipped_mass)
                         : "solved " + std::to_string(log.steps) + " steps";
  return o;
}

Outcome run_frozen_compare(const ojson& t)
{
  const auto fam = build_family(t["coefficients"]);
  const auto& n = t["numerics"];
  const auto& s = t["frozen-compare"];
  const auto grid = build_grid(n);
  const double H = n["horizon"].get<double>();
  const auto times = checkpoints(n);
  const auto flow = solve_nonlinear_fpe(build_density(t["initial"], grid), fam.coeffs, 0.0, H, build_solver(n));
  auto sc = build_solver(n);
  sc.output_times.assign(times.begin() + 1, times.end());
  const auto nu = solve_frozen_fpe(build_density(s["companion"], grid), flow, fam.coeffs, 0.0, H, sc);
  auto sim = build_sim(t);
  sim.record_times.assign(times.begin() + 1, times.end());
  const auto e = simulate_frozen(build_cloud(s["companion"], sim.n_particles, sim.seed, kCompanionStream), flow,
                                 fam.coeffs, 0.0, H, sim);
  const double bound = s["bound_constant"].get<double>() *
                       (1.0 / std::sqrt(static_cast<double>(sim.n_particles)) + sim.dt);
  Outcome o;
  o.results = Table({"t", "w1_particle_fpe", "bound", "mean_fpe", "mean_particles"});
  std::size_t breaches = 0;
  for (double tk : times) {
    const auto m = marginal(e, tk);
    const auto rho = nu.state_at(tk);
    const double w1 = wasserstein1(m, rho);
    if (tk > 0.0 && w1 > bound)
      ++breaches;
    o.results.add({tk, w1, bound, moments(rho).mean[0], moments(m).mean[0]});
  }
  o.summary["bound"] = bound;
  o.summary["breaches"] = breaches;
  o.violated = breaches > 0;
  o.plot = {{"W1 particle vs FPE", o.results.column("t"), o.results.column("w1_particle_fpe")},
            {"bound", o.results.column("t"), o.results.column("bound"), true}};
  o.style.title = "frozen particles against the frozen FPE";
  o.style.y_label = "W1";
  o.message = o.violated ? std::to_string(breaches) + " checkpoints exceed the W1 bound " + format_double(bound)
                         : "W1 within " + format_double(bound) + " at every checkpoint";
  return o;
}

Outcome run_check_ck(const ojson& t)
{
  const auto fam = build_family(t["coefficients"]);
  const auto& n = t["numerics"];
  const auto& s = t["check-ck"];
  const auto grid = build_grid(n);
  KernelConfig kc;
  kc.solver = build_solver(n);
  kc.sim = build_sim(t);
  kc.mollifier = s["mollifier"].get<std::string>() == "hat" ? DiracMollifier::hat : DiracMollifier::one_cell;
  const LiftedTestFunction G{h0_named(s["h0"].get<std::string>()), F_named(s["F"].get<std::string>())};
  const auto q = s["quad_points"].get<std::size_t>();
  const double a = s["s"].get<double>(), r = s["r"].get<double>(), b = s["t"].get<double>(), x = s["x"].get<double>();
  const auto rep = chapman_kolmogorov_residual(x, build_density(t["initial"], grid), a, r, b, fam.coeffs, G,
                                               q == 0 ? grid.cells : q, kc);
  const double tol = s["tolerance"].get<double>();
  Outcome o;
  o.results = Table({"s", "r", "t", "x", "direct", "composed", "residual", "tolerance", "nodes"});
  o.results.add({a, r, b, x, rep.direct, rep.composed, rep.residual, tol, static_cast<double>(rep.nodes)});
  o.summary["direct"] = rep.direct;
  o.summary["composed"] = rep.composed;
  o.summary["residual"] = rep.residual;
  o.summary["tolerance"] = tol;
  o.summary["nodes"] = rep.nodes;
  o.summary["exact_quadrature"] = rep.exact_quadrature;
  o.summary["mollifier_width"] = rep.mollifier_width;
  o.violated = !(rep.residual <= tol);
  o.message = "Chapman-Kolmogorov residual " + format_double(rep.residual) + (o.violated ? " exceeds " : " within ") +
              format_double(tol);
  return o;
}

Outcome run_ergodicity(const ojson& t)
{
  const auto fam = build_family(t["coefficients"]);
  if (!fam.constants)
    throw Error("ergodicity: family '" + t["coefficients"]["family"].get<std::string>() +
                "' has no monotonicity constants; use meanfield-ou");
  const auto& k = *fam.constants;
  const auto& n = t["numerics"];
  const auto& s = t["ergodicity"];
  const auto sim = build_sim(t);
  InvariantConfig icfg;
  icfg.sim = sim;
  icfg.window = s["window"].get<double>();
  icfg.max_horizon = s["max_horizon"].get<double>();
  const auto method =
    s["method"].get<std::string>() == "long-run" ? InvariantMethod::long_run : InvariantMethod::moment_fixed_point;
  const auto inv = find_invariant(fam.coeffs, k, method, icfg);
  DecayConfig dcfg;
  dcfg.sim = sim;
  dcfg.bootstrap = s["bootstrap"].get<std::size_t>();
  const double H = n["horizon"].get<double>();
  const auto rep = decay_study(build_cloud(t["initial"], sim.n_particles, sim.seed, kInitialStream),
                               build_cloud(s["companion"], sim.n_particles, sim.seed, kCompanionStream), fam.coeffs, k,
                               inv, H, n["checkpoints"].get<std::size_t>(), dcfg);
  Outcome o;
  o.results = Table({"t", "w2_mu_sq", "err_mu_sq", "w2_nu_sq", "err_nu_sq", "bound"});
  for (std::size_t i = 0; i < rep.times.size(); ++i)
    o.results.add({rep.times[i], rep.w2_mu[i] * rep.w2_mu[i], rep.err_mu_sq[i], rep.w2_nu[i] * rep.w2_nu[i],
                   rep.err_nu_sq[i], rep.bound[i]});
  o.summary["constants"] = constants_json(k);
  o.summary["fitted_rate"] = rep.fitted_rate;
  o.summary["fit_points"] = rep.fit_points;
  o.summary["noise_floor"] = rep.noise_floor;
  o.summary["w2_zeta"] = rep.w2_zeta;
  o.summary["w2_theta"] = rep.w2_theta;
  o.summary["violations_mu"] = rep.violations_mu;
  o.summary["violations_total"] = rep.violations_total;
  if (inv.mu_gaussian)
    o.summary["invariant_mu"] = ojson{{"mean", inv.mu_gaussian->mean}, {"var", inv.mu_gaussian->var}};
  o.summary["invariant_horizon"] = inv.horizon_used;
  o.violated = rep.violations_mu + rep.violations_total > 0;
  o.plot = {{"W2(mu_t, mu_inf)^2", o.results.column("t"), o.results.column("w2_mu_sq")},
            {"envelope", o.results.column("t"), o.results.column("bound"), true}};
  o.style.title = "decay to the invariant law";
  o.style.y_label = "squared W2";
  o.style.log_y = true;
  o.message = o.violated ? "envelope breached at " + std::to_string(rep.violations_mu + rep.violations_total) +
                             " checkpoints"
                         : "envelope holds; fitted rate " + format_double(rep.fitted_rate);
  return o;
}

Outcome run_feynman_kac(const ojson& t)
{
  const auto fam = build_family(t["coefficients"]);
  const auto& n = t["numerics"];
  const auto& s = t["feynman-kac"];
  FKProblem p;
  p.coeffs = fam.coeffs;
  p.T = s["T"].get<double>();
  p.Phi = phi_named(s["Phi"].get<std::string>());
  p.name = "Phi=" + s["Phi"].get<std::string>();
  const double V = s["V"].get<double>(), f = s["f"].get<double>();
  if (V != 0.0) {
    p.V = [V](double, std::span<const double>, const MeasureView&) { return V; };
    p.V_bound = std::abs(V);
  }
  if (f != 0.0)
    p.f_source = [f](double, std::span<const double>, const MeasureView&) { return f; };
  FKConfig cfg;
  cfg.sim = build_sim(t);
  cfg.sim.n_particles = s["replicas"].get<std::size_t>();
  cfg.flow_particles = s["flow_particles"].get<std::size_t>();
  cfg.flow_backend = s["flow_backend"].get<std::string>() == "fpe" ? FlowBackend::fpe : FlowBackend::particle;
  cfg.solver = build_solver(n);
  cfg.grid = build_grid(n);
  const auto mu = build_cloud(t["initial"], cfg.flow_particles, cfg.sim.seed, kInitialStream);
  const double t0 = s["t"].get<double>();
  const auto xs = s["x"].get<std::vector<double>>();

  Outcome o;
  o.results = Table({"x", "value", "stderr"});
  ojson hashes = ojson::array();
  for (double x : xs) {
    const auto est = fk_evaluate(p, t0, x, mu, cfg);
    o.results.add({x, est.value, est.stderr});
    hashes.push_back(est.config_hash);
  }
  o.summary["t"] = t0;
  o.summary["T"] = p.T;
  o.summary["replicas"] = cfg.sim.n_particles;
  o.summary["config_hashes"] = hashes;
  o.message = "evaluated u at " + std::to_string(xs.size()) + " points";
  if (s["residual"].get<bool>()) {
    PdeResidualConfig rc;
    rc.fk = cfg;
    rc.steps = {s["dt_fd"].get<double>(), s["dx_fd"].get<double>(), s["eps_measure"].get<double>()};
    const auto r = pde_residual(p, t0, xs.front(), mu, rc);
    o.summary["residual"] = ojson{{"x", xs.front()},
                                  {"u", r.u},
                                  {"dt_term", r.dt_term},
                                  {"spatial_term", r.spatial_term},
                                  {"measure_term", r.measure_term},
                                  {"potential_term", r.potential_term},
                                  {"source_term", r.source_term},
                                  {"residual", r.residual},
                                  {"stderr", r.stderr},
                                  {"truncation", r.truncation},
                                  {"budget", r.budget}};
    o.violated = !(std::abs(r.residual) <= r.budget);
    o.message += o.violated ? "; backward equation residual exceeds its budget" : "; residual within budget";
  }
  if (xs.size() >= 2) {
    o.plot = {{"u(t, x, mu)", o.results.column("x"), o.results.column("value")}};
    o.style.title = "Feynman-Kac estimate";
    o.style.x_label = "x";
    o.style.y_label = "u";
  }
  return o;
}

Outcome run_gradient_check(const ojson& t)
{
  const auto& s = t["gradient-check"];
  const auto seed = t["seed"].get<std::uint64_t>();
  const auto mu = build_cloud(t["initial"], s["atoms"].get<std::size_t>(), seed, kInitialStream);
  const double min_order = s["min_order"].get<double>(), max_rel = s["max_rel_error"].get<double>();
  Outcome o;
  o.results = Table({"index", "pairing", "observed_order", "rel_error_fine"});
  std::size_t failed = 0;
  const auto count = s["functions"].get<std::size_t>();
  for (std::size_t i = 0; i < count; ++i) {
    const auto st = gradient_fd_study(random_cylindrical(seed + i), mu, random_direction(seed + i),
                                      s["eps0"].get<double>(), s["levels"].get<int>(), s["fine_eps"].get<double>());
    if (!(st.observed_order >= min_order) || !(st.rel_error_fine <= max_rel))
      ++failed;
    o.results.add({static_cast<double>(i), st.pairing, st.observed_order, st.rel_error_fine});
  }
  o.summary["functions"] = count;
  o.summary["failed"] = failed;
  o.violated = failed > 0;
  o.message = std::to_string(count - failed) + " of " + std::to_string(count) + " gradient checks passed";
  return o;
}

Outcome run_validate_hypotheses(const ojson& t)
{
  const auto fam = build_family(t["coefficients"]);
  const auto& s = t["validate-hypotheses"];
  SampleBox box;
  box.lo = s["lo"].get<double>();
  box.hi = s["hi"].get<double>();
  box.n_samples = s["samples"].get<std::size_t>();
  box.seed = t["seed"].get<std::uint64_t>();
  const auto rep = fam.nldbm ? validate_hypotheses(*fam.nldbm, box) : validate_hypotheses(fam.coeffs, *fam.constants, box);
  Outcome o;
  o.results = Table({"index", "worst_margin", "passed", "samples"});
  ojson checks = ojson::array();
  for (std::size_t i = 0; i < rep.checks.size(); ++i) {
    const auto& c = rep.checks[i];
    o.results.add({static_cast<double>(i), c.worst_margin, c.passed ? 1.0 : 0.0, static_cast<double>(c.samples)});
    checks.push_back(ojson{{"name", c.name}, {"worst_margin", c.worst_margin}, {"passed", c.passed}, {"samples", c.samples}});
  }
  o.summary["checks"] = checks;
  o.summary["passed"] = rep.passed();
  o.violated = !rep.passed();
  o.message = rep.passed() ? "all hypotheses hold on the sample box" : "hypothesis violated on the sample box";
  return o;
}

Outcome dispatch(const ExperimentConfig& cfg)
{
  switch (cfg.kind) {
  case ExperimentKind::simulate_mkv: return run_simulate(cfg.tree);
  case ExperimentKind::solve_fpe: return run_solve_fpe(cfg.tree);
  case ExperimentKind::frozen_compare: return run_frozen_compare(cfg.tree);
  case ExperimentKind::check_ck: return run_check_ck(cfg.tree);
  case ExperimentKind::ergodicity: return run_ergodicity(cfg.tree);
  case ExperimentKind::feynman_kac: return run_feynman_kac(cfg.tree);
  case ExperimentKind::gradient_check: return run_gradient_check(cfg.tree);
  case ExperimentKind::validate_hypotheses: return run_validate_hypotheses(cfg.tree);
  }
  throw Error("unknown experiment");
}

void publish(const std::filesystem::path& staging, const std::filesystem::path& out)
{
  namespace fs = std::filesystem;
  if (fs::exists(out)) {
    if (!fs::is_directory(out))
      throw Error("output path " + out.string() + " exists and is not a directory");
    if (fs::exists(out / "manifest.json") || fs::is_empty(out))
      fs::remove_all(out);
    else
      throw Error("refusing to replace " + out.string() + ": it is not empty and holds no manifest.json");
  }
  fs::rename(staging, out);
}

} // namespace

const std::vector<std::string>& experiment_names()
{
  static const std::vector<std::string> names = {"simulate-mkv", "solve-fpe",   "frozen-compare", "check-ck",
                                                 "ergodicity",   "feynman-kac", "gradient-check", "validate-hypotheses"};
  return names;
}

std::string to_string(ExperimentKind k)
{
  return experiment_names().at(static_cast<std::size_t>(k));
}

ConfigError::ConfigError(std::vector<std::string> problems)
  : Error([&] {
    std::string s = "invalid configuration:";
    for (const auto& p : problems)
      s += "\n  - " + p;
    return s;
  }())
  , problems_(std::move(problems))
{}

ojson default_config(ExperimentKind kind)
{
  const std::string name = to_string(kind);
  ojson c{{"family", "meanfield-ou"}, {"lambda0", 1.0}, {"kappa0", 0.0}, {"sigma0", 1.0}, {"b_const", 0.0}};
  ojson init = law("gaussian", 0.0, 0.5);
  ojson n{{"n_particles", 10000u}, {"dt", 1e-3},    {"dx", 1e-2},       {"x_min", -10.0},
          {"x_max", 10.0},         {"horizon", 1.0}, {"checkpoints", 4u}, {"bandwidth", 0.0}};
  switch (kind) {
  case ExperimentKind::check_ck:
    c["family"] = "heat";
    n["x_min"] = -6.0;
    n["x_max"] = 6.0;
    n["dx"] = 5e-2;
    n["dt"] = 1e-2;
    break;
  case ExperimentKind::ergodicity:
    c["kappa0"] = 0.5;
    init = law("dirac", 0.0, 0.5, 2.0);
    n["dt"] = 5e-3;
    n["horizon"] = 8.0;
    n["checkpoints"] = 20u;
    break;
  case ExperimentKind::feynman_kac:
    n["dt"] = 1e-2;
    break;
  case ExperimentKind::frozen_compare:
    c["kappa0"] = 0.5;
    n["x_min"] = -8.0;
    n["x_max"] = 8.0;
    n["dt"] = 1e-2;
    init = law("gaussian", 1.0, 0.5);
    break;
  default:
    break;
  }
  return ojson{{"experiment", name}, {"seed", 1u},   {"coefficients", c}, {"initial", init}, {"numerics", n},
               {"output", ojson{{"dir", ""}, {"plot", true}}},
               {name, section(kind)}};
}

std::vector<std::string> validate_config(const json& doc)
{
  std::vector<std::string> errs;
  if (!doc.is_object())
    return {"top level must be an object"};
  if (!doc.contains("experiment") || !doc["experiment"].is_string())
    return {"'experiment' is required and must be one of: " + join(experiment_names())};
  const auto kind = kind_of(doc["experiment"].get<std::string>());
  if (!kind)
    return {"'experiment' must be one of: " + join(experiment_names()) + " (got '" +
            doc["experiment"].get<std::string>() + "')"};
  const auto schema = default_config(*kind);
  check_tree(doc, schema, "", errs);
  check_values(merged(schema, doc), *kind, errs);
  return errs;
}

ExperimentConfig resolve_config(const json& doc)
{
  auto errs = validate_config(doc);
  if (!errs.empty())
    throw ConfigError(std::move(errs));
  ExperimentConfig cfg;
  cfg.kind = *kind_of(doc["experiment"].get<std::string>());
  cfg.tree = merged(default_config(cfg.kind), doc);
  cfg.output_dir = cfg.tree["output"]["dir"].get<std::string>();
  cfg.tree["output"].erase("dir");
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw Error("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  return resolve_config(doc);
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir)
{
  namespace fs = std::filesystem;
  const Outcome o = dispatch(cfg);

  const fs::path out = out_dir.lexically_normal();
  const fs::path staging = out.string() + ".staging";
  if (!out.parent_path().empty())
    fs::create_directories(out.parent_path());
  fs::remove_all(staging);
  fs::create_directory(staging);
  RunResult res;
  try {
    std::vector<std::pair<std::string, std::string>> files;
    files.emplace_back("results.csv", to_csv(o.results));
    ojson results{{"experiment", to_string(cfg.kind)},
                  {"status", o.violated ? "invariant_violation" : "ok"},
                  {"message", o.message},
                  {"summary", o.summary},
                  {"columns", o.results.columns},
                  {"rows", o.results.rows}};
    files.emplace_back("results.json", results.dump(2) + "\n");
    for (const auto& e : o.extra)
      files.push_back(e);
    if (cfg.tree["output"]["plot"].get<bool>() && !o.plot.empty())
      files.emplace_back("plot.svg", render_svg(o.plot, o.style));

    ojson artifacts = ojson::array();
    for (const auto& [name, bytes] : files) {
      write_text(staging / name, bytes);
      artifacts.push_back(ojson{{"file", name}, {"bytes", bytes.size()}, {"fnv1a64", fnv1a_hex(bytes)}});
      res.artifacts.push_back(name);
    }
    ojson manifest{{"tool", "mkvlab"},
                   {"version", MKVLAB_VERSION},
                   {"experiment", to_string(cfg.kind)},
                   {"seed", cfg.tree["seed"]},
                   {"status", o.violated ? "invariant_violation" : "ok"},
                   {"config", cfg.tree},
                   {"libraries", ojson{{"boost", BOOST_LIB_VERSION},
                                       {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
                   {"artifacts", artifacts}};
    write_text(staging / "manifest.json", manifest.dump(2) + "\n");
    res.artifacts.push_back("manifest.json");
    publish(staging, out);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
  res.exit_code = o.violated ? kExitInvariant : kExitOk;
  res.summary = o.message;
  return res;
}

} // namespace mkv
