#include "doctest.h"

#include "mkvlab/ergodicity.hpp"
#include "mkvlab/error.hpp"
#include "mkvlab/fpe.hpp"
#include "mkvlab/wasserstein.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace mkv;

TEST_CASE("envelope closed form and degenerate branch")
{
  const auto k = meanfield_ou_coefficients(1.0, 0.5, 1.0).constants;
  CHECK(k.lambda - k.kappa == doctest::Approx(1.0));
  // lambda = lambda_bar = 3/2, kappa = kappa_bar = 1/2: with both initial
  // squared distances 3/2 the bound collapses to 3 e^{-t}
  for (double t : {0.0, 0.5, 2.0, 8.0})
    CHECK(decay_envelope(k, 1.5, 1.5, t) == doctest::Approx(3.0 * std::exp(-t)).epsilon(1e-13));

  MonotonicityConstants d{1.0, 2.0, 0.5, 1.5, 0.7}; // kappa + lambda_bar = lambda
  for (double t : {0.1, 1.0, 5.0}) {
    const double at = decay_envelope(d, 1.0, 0.3, t);
    CHECK(at == doctest::Approx(std::exp(-1.5 * t) + 0.7 * t * std::exp(-1.5 * t) + 0.3 * std::exp(-1.5 * t))
                  .epsilon(1e-13));
    for (double eps : {1e-8, -1e-8, 1e-11, -1e-11}) {
      auto near = d;
      near.lambda_bar += eps;
      CHECK(std::abs(decay_envelope(near, 1.0, 0.3, t) - at) <= 1e-6 * at);
    }
  }
}

TEST_CASE("closed-form invariant laws")
{
  InvariantConfig cfg;
  cfg.sim.n_particles = 1000;
  for (double k0 : {0.5, 0.0}) {
    const auto ou = meanfield_ou_coefficients(1.0, k0, 1.0);
    const auto inv = find_invariant(ou.coeffs, ou.constants, InvariantMethod::moment_fixed_point, cfg);
    REQUIRE(inv.mu_gaussian);
    CHECK(inv.mu_gaussian->mean == 0.0);
    CHECK(inv.mu_gaussian->var == doctest::Approx(0.5));
    CHECK(inv.nu_gaussian->var == doctest::Approx(0.5));
    CHECK(inv.mu_inf.size() == 1000);
    CHECK(wasserstein2_to_gaussian(inv.mu_inf, 0.0, 0.5) <= 0.01);
  }
}

TEST_CASE("contraction hypothesis is enforced")
{
  const auto ou = meanfield_ou_coefficients(1.0, 2.5, 1.0);
  REQUIRE_FALSE(ou.constants.lambda > ou.constants.kappa);
  try {
    find_invariant(ou.coeffs, ou.constants, InvariantMethod::moment_fixed_point, {});
    FAIL("expected refusal");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("lambda > kappa") != std::string::npos);
  }
  CHECK_THROWS_AS(decay_study(EmpiricalMeasure::dirac(1.0), EmpiricalMeasure::dirac(1.0), ou.coeffs, ou.constants,
                              InvariantPair{}, 1.0, 3, {}),
                  Error);
}

TEST_CASE("long run agrees with the moment fixed point")
{
  const auto ou = meanfield_ou_coefficients(1.0, 0.5, 1.0);
  InvariantConfig cfg;
  cfg.sim.n_particles = 10000;
  cfg.sim.dt = 5e-3;
  const auto lr = find_invariant(ou.coeffs, ou.constants, InvariantMethod::long_run, cfg, EmpiricalMeasure::dirac(2.0));
  const auto mf = find_invariant(ou.coeffs, ou.constants, InvariantMethod::moment_fixed_point, cfg);
  CHECK(lr.horizon_used >= 2.0);
  CHECK(lr.last_increment < 2.0 / std::sqrt(1e4));
  CHECK(wasserstein2_to_gaussian(lr.mu_inf, 0.0, 0.5) <= 2e-2);
  CHECK(wasserstein2(lr.nu_inf, mf.nu_inf) <= 2e-2);
}

TEST_CASE("decay study on the mean-field OU pair")
{
  const auto ou = meanfield_ou_coefficients(1.0, 0.5, 1.0);
  DecayConfig cfg;
  cfg.sim.n_particles = 10000;
  cfg.sim.dt = 5e-3;
  cfg.probes = {TestFunction::monomial(1), TestFunction::monomial(2)};
  const auto inv = find_invariant(ou.coeffs, ou.constants, InvariantMethod::moment_fixed_point, {});
  const auto rep =
    decay_study(EmpiricalMeasure::dirac(1.0), EmpiricalMeasure::dirac(-1.0), ou.coeffs, ou.constants, inv, 8.0, 20, cfg);
  REQUIRE(rep.times.size() == 20);
  CHECK(rep.w2_zeta * rep.w2_zeta == doctest::Approx(1.5).epsilon(1e-9));
  CHECK(rep.violations_mu == 0);
  CHECK(rep.violations_total == 0);
  CHECK(rep.fit_points >= 2);
  CHECK(rep.fitted_rate >= 0.9);

  // probe gaps against the moment ODEs: m' = -m / 2, s' = -2 s + 1 + m^2 (s = E x^2)
  const auto sol = [](double t) {
    return testutil::rk4(
      [](double, const std::vector<double>& y) {
        return std::vector<double>{-0.5 * y[0], -2.0 * y[1] + 1.0 + y[0] * y[0]};
      },
      {1.0, 1.0}, 0.0, t);
  };
  for (std::size_t j = 1; j < rep.times.size(); ++j) {
    const auto y = sol(rep.times[j]);
    CHECK(std::abs(rep.probe_gaps[0][j] - std::abs(y[0])) <= 5.0 * std::sqrt(0.5 / 1e4) + 0.01);
    CHECK(std::abs(rep.probe_gaps[1][j] - std::abs(y[1] - 0.5)) <= 5.0 * std::sqrt(0.5 / 1e4) + 0.01);
  }
  // monotone decay until the gap reaches the noise floor
  for (std::size_t j = 1; j < rep.times.size(); ++j)
    if (rep.probe_gaps[0][j - 1] > 0.05)
      CHECK(rep.probe_gaps[0][j] < rep.probe_gaps[0][j - 1]);
}

TEST_CASE("starting at the invariant law stays at the noise floor")
{
  const auto ou = meanfield_ou_coefficients(1.0, 0.5, 1.0);
  DecayConfig cfg;
  cfg.sim.n_particles = 10000;
  cfg.sim.dt = 5e-3;
  cfg.bootstrap = 0;
  const auto inv = find_invariant(ou.coeffs, ou.constants, InvariantMethod::moment_fixed_point, {});
  const auto start = testutil::gaussian_cloud(10000, 0.0, 0.5, 21);
  const auto rep = decay_study(start, start, ou.coeffs, ou.constants, inv, 2.0, 5, cfg);
  for (double w : rep.w2_mu)
    CHECK(w <= 3.0 / std::sqrt(1e4));
}

TEST_CASE("one flow step leaves the invariant law in place")
{
  const auto ou = meanfield_ou_coefficients(1.0, 0.5, 1.0);
  const auto g = GridSpec::covering(-6.0, 6.0, 1e-2);
  SolverConfig cfg;
  cfg.dt = 1e-3;
  const auto path = solve_nonlinear_fpe(GridDensity1D::gaussian(g, 0.0, 0.5), ou.coeffs, 0.0, 0.1, cfg);
  CHECK(wasserstein2_to_gaussian(path.states.back(), 0.0, 0.5) <= 1e-3);
}
