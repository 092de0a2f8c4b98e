#include "doctest.h"

#include "mkvlab/error.hpp"
#include "mkvlab/fpe.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace mkv;

namespace {

double max_l1_over_path(const DensityPath& a, const DensityPath& b)
{
  REQUIRE(a.times.size() == b.times.size());
  double worst = 0.0;
  for (std::size_t k = 0; k < a.times.size(); ++k) {
    CHECK(a.times[k] == doctest::Approx(b.times[k]));
    worst = std::max(worst, l1_distance(a.states[k], b.states[k]));
  }
  return worst;
}

NLDBMParams ou_like()
{
  // beta(r) = r, b = 1, Phi = 1 + x^2 / 2 so D(x) = -x
  auto p = NLDBMParams::linear(1.0);
  p.Phi = [](double x) { return 1.0 + 0.5 * x * x; };
  p.grad_Phi = [](double x) { return x; };
  return p;
}

} // namespace

TEST_CASE("heat equation against the heat kernel")
{
  const double dx = 1e-2, dt = 1e-3;
  const auto g = GridSpec::covering(-8.0, 8.0, dx);
  const auto u0 = GridDensity1D::gaussian(g, 0.0, 0.1);
  SolverConfig cfg;
  cfg.dt = dt;
  cfg.output_times = {0.5, 1.0};
  const auto exact = GridDensity1D::gaussian(g, 0.0, 1.1);
  for (const auto& c : {nldbm_coefficients(NLDBMParams::linear(0.0)), heat_coefficients(1.0)}) {
    const auto path = solve_nonlinear_fpe(u0, c, 0.0, 1.0, cfg);
    REQUIRE(path.times.size() == 3);
    CHECK(path.times.back() == 1.0);
    CHECK(l1_distance(path.states.back(), exact) <= 2 * dx + 10 * dt);
    CHECK(path.log.max_mass_error <= 1e-12);
    CHECK(path.log.clipped_mass == 0.0);
    CHECK(path.states.back().sup_norm() <= 2.0 * u0.sup_norm());
  }
}

TEST_CASE("stationary Gaussian of the linear drift case")
{
  const auto g = GridSpec::covering(-6.0, 6.0, 1e-2);
  const auto u0 = GridDensity1D::gaussian(g, 0.0, 0.5);
  SolverConfig cfg;
  cfg.dt = 1e-2;
  cfg.output_times = {1.0, 2.0, 3.0, 4.0, 5.0};
  const auto path = solve_nonlinear_fpe(u0, nldbm_coefficients(ou_like()), 0.0, 5.0, cfg);
  for (const auto& st : path.states)
    CHECK(l1_distance(st, u0) <= 1e-3);
  CHECK(path.log.max_mass_error <= 1e-12);
}

TEST_CASE("zero-length solve returns the initial state")
{
  const auto g = GridSpec::covering(-2.0, 2.0, 0.1);
  const auto u0 = GridDensity1D::gaussian(g, 0.0, 0.2);
  const auto path = solve_nonlinear_fpe(u0, heat_coefficients(), 0.3, 0.3, {});
  REQUIRE(path.states.size() == 1);
  CHECK(path.times[0] == 0.3);
  CHECK(path.states[0].values() == u0.values());
}

TEST_CASE("frozen solve along its own flow reproduces the nonlinear path")
{
  const double dt = 1e-3;
  const auto g = GridSpec::covering(-8.0, 8.0, 2e-2);
  const auto u0 = GridDensity1D::gaussian(g, 0.3, 0.4);
  SolverConfig cfg;
  cfg.dt = dt;
  const auto c = nldbm_coefficients(NLDBMParams::canonical());
  const auto flow = solve_nonlinear_fpe(u0, c, 0.0, 0.5, cfg);
  const auto frozen = solve_frozen_fpe(u0, flow, c, cfg);
  CHECK(max_l1_over_path(flow, frozen) <= 10 * dt);
  CHECK(frozen.log.max_mass_error <= 1e-12);

  // sub-sampled flow: the frozen solver interpolates between states
  SolverConfig coarse = cfg;
  coarse.output_times = {0.1, 0.2, 0.3, 0.4, 0.5};
  const auto sparse = solve_nonlinear_fpe(u0, c, 0.0, 0.5, coarse);
  const auto frozen2 = solve_frozen_fpe(u0, sparse, c, coarse);
  CHECK(max_l1_over_path(sparse, frozen2) <= 10 * dt);
}

TEST_CASE("frozen solve with constant coefficients is the heat flow")
{
  const double dx = 1e-2, dt = 1e-3;
  const auto g = GridSpec::covering(-8.0, 8.0, dx);
  SolverConfig cfg;
  cfg.dt = dt;
  const auto c = nldbm_coefficients(NLDBMParams::linear(0.0));
  const auto flow = solve_nonlinear_fpe(GridDensity1D::gaussian(g, 2.0, 0.3), c, 0.0, 1.0, cfg);
  const auto nu = solve_frozen_fpe(GridDensity1D::gaussian(g, -1.0, 0.1), flow, c, cfg);
  CHECK(l1_distance(nu.states.back(), GridDensity1D::gaussian(g, -1.0, 1.1)) <= 2 * dx + 10 * dt);
}

TEST_CASE("mass is conserved far from the flow")
{
  const auto g = GridSpec::covering(-10.0, 10.0, 2e-2);
  SolverConfig cfg;
  cfg.dt = 2e-3;
  const auto c = nldbm_coefficients(NLDBMParams::canonical());
  const auto flow = solve_nonlinear_fpe(GridDensity1D::gaussian(g, -5.0, 0.2), c, 0.0, 0.4, cfg);
  const auto nu = solve_frozen_fpe(GridDensity1D::gaussian(g, 5.0, 0.05), flow, c.companion().symmetric(), cfg);
  CHECK(nu.log.max_mass_error <= 1e-12);
  CHECK(std::abs(nu.states.back().mass() - 1.0) <= 1e-12);
}

TEST_CASE("weak residual")
{
  const auto g = GridSpec::covering(-8.0, 8.0, 1e-2);
  SolverConfig cfg;
  cfg.dt = 1e-4;
  cfg.output_times = {0.05, 0.1, 0.15, 0.2};
  const auto heat = heat_coefficients();
  const auto path = solve_nonlinear_fpe(GridDensity1D::gaussian(g, 0.0, 0.5), heat, 0.0, 0.2, cfg);
  for (double r : fpe_weak_residual(path, heat, TestFunction::constant(1.0)))
    CHECK(std::abs(r) <= 1e-12);
  for (double r : fpe_weak_residual(path, heat, TestFunction::monomial(2)))
    CHECK(std::abs(r) <= 1e-3);
}

TEST_CASE("weak residual converges for the NLDBM family")
{
  const auto c = nldbm_coefficients(NLDBMParams::canonical());
  const auto h = TestFunction::sine(1.0, 0.3);
  std::vector<double> res;
  for (double scale : {1.0, 0.5, 0.25}) {
    const auto g = GridSpec::covering(-8.0, 8.0, 4e-2 * scale);
    SolverConfig cfg;
    cfg.dt = 4e-2 * scale;
    const auto u0 = GridDensity1D::gaussian(g, 0.5, 0.3);
    const auto path = solve_nonlinear_fpe(u0, c, 0.0, 0.5, cfg);
    double worst = 0.0;
    for (double r : fpe_weak_residual(path, c, h))
      worst = std::max(worst, std::abs(r));
    res.push_back(worst);
  }
  const double slope1 = std::log2(res[0] / res[1]), slope2 = std::log2(res[1] / res[2]);
  MESSAGE("weak residuals " << res[0] << " " << res[1] << " " << res[2]);
  CHECK(slope1 >= 0.8);
  CHECK(slope2 >= 0.8);
}

TEST_CASE("explicit scheme and CFL")
{
  const auto g = GridSpec::covering(-6.0, 6.0, 5e-2);
  const auto u0 = GridDensity1D::gaussian(g, 0.0, 0.3);
  const auto c = nldbm_coefficients(NLDBMParams::canonical());
  SolverConfig ex;
  ex.scheme = Scheme::explicit_euler;
  ex.dt = 1e-2;
  CHECK_THROWS_AS(solve_nonlinear_fpe(u0, c, 0.0, 0.1, ex), CflError);
  ex.dt = 2e-4;
  const auto pe = solve_nonlinear_fpe(u0, c, 0.0, 0.2, ex);
  SolverConfig im;
  im.dt = 2e-4;
  const auto pi = solve_nonlinear_fpe(u0, c, 0.0, 0.2, im);
  CHECK(l1_distance(pe.states.back(), pi.states.back()) <= 1e-3);
  CHECK(pe.log.max_mass_error <= 1e-12);
}

TEST_CASE("Newton failure is reported with the residual")
{
  const auto g = GridSpec::covering(-4.0, 4.0, 5e-2);
  SolverConfig cfg;
  cfg.max_newton = 0;
  try {
    solve_nonlinear_fpe(GridDensity1D::gaussian(g, 0.0, 0.3), nldbm_coefficients(NLDBMParams::canonical()), 0.0, 0.1,
                        cfg);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.residual() > 0.0);
  }
}

TEST_CASE("mean-field OU density: mean follows the moment ODE")
{
  const auto g = GridSpec::covering(-8.0, 8.0, 1e-2);
  const auto r = meanfield_ou_coefficients(1.0, 0.5, 1.0);
  SolverConfig cfg;
  cfg.dt = 1e-3;
  cfg.output_times = {1.0};
  const auto path = solve_nonlinear_fpe(GridDensity1D::gaussian(g, 1.0, 0.2), r.coeffs, 0.0, 1.0, cfg);
  const auto m = moments(path.states.back());
  CHECK(m.mean[0] == doctest::Approx(std::exp(-0.5)).epsilon(2e-3));
  // variance: v' = -2 v + 1
  CHECK(m.covariance[0] == doctest::Approx(0.5 + (0.2 - 0.5) * std::exp(-2.0)).epsilon(5e-3));
}

TEST_CASE("path interpolation and coverage")
{
  const auto g = GridSpec::covering(-4.0, 4.0, 0.1);
  SolverConfig cfg;
  cfg.dt = 0.01;
  cfg.output_times = {0.1, 0.2};
  const auto path = solve_nonlinear_fpe(GridDensity1D::gaussian(g, 0.0, 0.3), heat_coefficients(), 0.0, 0.2, cfg);
  CHECK(path.index_of(0.1) == 1);
  CHECK(path.index_of(0.15) == -1);
  const auto mid = path.state_at(0.15);
  for (std::size_t i = 0; i < g.cells; ++i)
    CHECK(mid.values()[i] == doctest::Approx(0.5 * (path.states[1].values()[i] + path.states[2].values()[i])));
  CHECK_THROWS_AS(path.state_at(0.3), Error);
  const auto flow = path;
  CHECK_THROWS_AS(solve_frozen_fpe(path.states[0], flow, heat_coefficients(), 0.0, 0.5, cfg), Error);
}
