#include "doctest.h"

#include "mkvlab/cylindrical.hpp"
#include "mkvlab/error.hpp"
#include "mkvlab/feynman_kac.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace mkv;

namespace {

FKConfig config(std::size_t replicas, double dt, std::uint64_t seed = 3)
{
  FKConfig cfg;
  cfg.sim.n_particles = replicas;
  cfg.sim.dt = dt;
  cfg.sim.seed = seed;
  cfg.flow_particles = 10000;
  return cfg;
}

double mean_of(const MeasureView& mu)
{
  return mu.mean()[0];
}

FKProblem ou_problem(double kappa0, double T)
{
  FKProblem p;
  p.coeffs = meanfield_ou_coefficients(1.0, kappa0, 1.0).coeffs;
  p.T = T;
  return p;
}

} // namespace

TEST_CASE("constant data")
{
  const auto mu = testutil::gaussian_cloud(2000, 0.0, 1.0, 11);
  FKProblem p;
  p.coeffs = heat_coefficients(1.0);
  p.Phi = [](std::span<const double>, const MeasureView&) { return 1.0; };
  auto cfg = config(200, 1e-2);
  const auto one = fk_evaluate(p, 0.0, 0.3, mu, cfg);
  CHECK(one.value == 1.0);
  CHECK(one.stderr == 0.0);
  CHECK(one.n_replicas == 200);
  CHECK(one.config_hash.size() == 16);

  const double c = -0.7;
  p.V = [c](double, std::span<const double>, const MeasureView&) { return c; };
  const auto ec = fk_evaluate(p, 0.25, 0.3, mu, cfg);
  CHECK(ec.value == doctest::Approx(std::exp(c * 0.75)).epsilon(1e-12));

  // source only: int_0^tau e^{c s} ds, left sums off by at most |c| dt tau
  p.Phi = [](std::span<const double>, const MeasureView&) { return 0.0; };
  p.f_source = [](double, std::span<const double>, const MeasureView&) { return 1.0; };
  const auto src = fk_evaluate(p, 0.0, 0.3, mu, cfg);
  const double exact = (std::exp(c) - 1.0) / c;
  CHECK(std::abs(src.value - exact) <= std::abs(c) * cfg.sim.dt);

  // at the terminal time the value is Phi itself
  p.Phi = [](std::span<const double> x, const MeasureView& m) { return x[0] + mean_of(m); };
  const auto end = fk_evaluate(p, 1.0, 0.3, mu, cfg);
  CHECK(end.value == doctest::Approx(0.3 + moments(mu).mean[0]).epsilon(1e-14));
}

TEST_CASE("config hash and determinism")
{
  const auto mu = testutil::gaussian_cloud(2000, 0.0, 1.0, 11);
  auto p = ou_problem(0.5, 1.0);
  p.Phi = [](std::span<const double> x, const MeasureView&) { return x[0] * x[0]; };
  auto cfg = config(500, 1e-2);
  const auto a = fk_evaluate(p, 0.0, 0.5, mu, cfg);
  const auto b = fk_evaluate(p, 0.0, 0.5, mu, cfg);
  CHECK(a.value == b.value);
  CHECK(a.config_hash == b.config_hash);
  cfg.sim.seed = 4;
  const auto c = fk_evaluate(p, 0.0, 0.5, mu, cfg);
  CHECK(c.config_hash != a.config_hash);
  CHECK(c.value != a.value);
}

TEST_CASE("decoupled OU against the Euler mean")
{
  auto p = ou_problem(0.0, 1.0);
  p.Phi = [](std::span<const double> x, const MeasureView&) { return x[0]; };
  const auto mu = testutil::gaussian_cloud(1000, 0.0, 1.0, 5);
  auto cfg = config(20000, 1e-2);
  for (double x : {-1.0, 0.0, 2.0}) {
    const auto e = fk_evaluate(p, 0.2, x, mu, cfg);
    // E X_T under Euler with 80 steps of size 0.01
    const double oracle = x * std::pow(1.0 - 1e-2, 80);
    CHECK(std::abs(e.value - oracle) <= 3.0 * e.stderr + 1e-12);
  }
}

TEST_CASE("mean-field OU terminal functionals")
{
  const double k0 = 0.5, tau = 1.0;
  auto p = ou_problem(k0, tau);
  const auto mu = testutil::gaussian_cloud(10000, 1.0, 0.5, 21);
  const double m0 = moments(mu).mean[0];
  auto cfg = config(20000, 5e-3);
  const double flow_tol = 4.0 / std::sqrt(10000.0) + 2e-2; // flow noise plus Euler bias

  SUBCASE("law functional")
  {
    p.Phi = [](std::span<const double>, const MeasureView& m) { return mean_of(m); };
    const auto e = fk_evaluate(p, 0.0, 0.0, mu, cfg);
    CHECK(std::abs(e.value - m0 * std::exp((k0 - 1.0) * tau)) <= flow_tol);
  }
  SUBCASE("state functional, both flow backends")
  {
    p.Phi = [](std::span<const double> x, const MeasureView&) { return x[0]; };
    const double x0 = -0.5;
    const double oracle = testutil::meanfield_ou_means(1.0, k0, m0, x0, tau)[1];
    const auto part = fk_evaluate(p, 0.0, x0, mu, cfg);
    CHECK(std::abs(part.value - oracle) <= 3.0 * part.stderr + flow_tol);
    cfg.flow_backend = FlowBackend::fpe;
    cfg.grid = GridSpec::covering(-8.0, 8.0, 2e-2);
    const auto grid = fk_evaluate(p, 0.0, x0, mu, cfg);
    CHECK(std::abs(grid.value - oracle) <= 3.0 * grid.stderr + flow_tol);
    CHECK(grid.config_hash != part.config_hash);
  }
}

TEST_CASE("potential bound is enforced")
{
  auto p = ou_problem(0.0, 0.5);
  p.Phi = [](std::span<const double>, const MeasureView&) { return 1.0; };
  p.V = [](double, std::span<const double> x, const MeasureView&) { return x[0]; };
  p.V_bound = 0.5;
  const auto mu = testutil::gaussian_cloud(500, 0.0, 1.0, 5);
  auto cfg = config(500, 1e-2);
  cfg.flow_particles = 500;
  CHECK_THROWS_WITH_AS(fk_evaluate(p, 0.0, 0.0, mu, cfg), doctest::Contains("exceeds the declared bound"), Error);
  p.V_bound = 1e300;
  CHECK_NOTHROW(fk_evaluate(p, 0.0, 0.0, mu, cfg));
  CHECK_THROWS_AS(fk_evaluate(p, 0.7, 0.0, mu, cfg), Error);
}

TEST_CASE("L-derivative by pushforward differences")
{
  const auto two = EmpiricalMeasure::uniform({-1.0, 1.0}, 1);
  const VectorField id = [](std::span<const double> x, std::span<double> out) { out[0] = x[0]; };
  const VectorField one = [](std::span<const double>, std::span<double> out) { out[0] = 1.0; };

  auto constant = [](const EmpiricalMeasure&) { return 4.0; };
  CHECK(l_derivative_fd(constant, two, id, 1e-4) == 0.0);
  auto mean = [](const EmpiricalMeasure& m) { return moments(m).mean[0]; };
  CHECK(std::abs(l_derivative_fd(mean, two, one, 1e-4) - 1.0) <= 1e-6);
  // second moment of (delta_{-1} + delta_1)/2 along x -> x: d/de (1+e)^2 at 0 = 2
  auto second = [](const EmpiricalMeasure& m) { return moments(m).second_moment; };
  CHECK(std::abs(l_derivative_fd(second, two, id, 1e-4) - 2.0) <= 1e-6);

  const auto cloud = testutil::gaussian_cloud(300, 0.4, 2.0, 9);
  const auto F = CylindricalFunction(
    {TestFunction::monomial(2), TestFunction::sine(1.0)}, OuterFunction::product(2));
  const VectorField phi = [](std::span<const double> x, std::span<double> out) { out[0] = std::cos(x[0]) - 0.3; };
  auto g = [&F](const EmpiricalMeasure& m) { return F(m); };
  CHECK(l_derivative_fd(g, cloud, phi, 1e-4) == doctest::Approx(gradient_pairing(F, cloud, phi)).epsilon(1e-6));
  CHECK_THROWS_AS(l_derivative_fd(g, cloud, phi, 0.0), Error);
}

TEST_CASE("backward equation residual")
{
  const double k0 = 0.5, T = 1.0, t = 0.3, x = 0.8;
  auto p = ou_problem(k0, T);
  const auto mu = testutil::gaussian_cloud(10000, 1.0, 0.5, 31);
  const double m0 = moments(mu).mean[0];
  PdeResidualConfig cfg;
  cfg.fk = config(4000, 1e-2);

  SUBCASE("state and law terminal data")
  {
    // u = x m(mu) e^{...}: every generator term is active
    p.Phi = [](std::span<const double> y, const MeasureView& m) { return y[0] * mean_of(m); };
    const auto r = pde_residual(p, t, x, mu, cfg);
    CHECK(std::abs(r.residual) <= r.budget);
    CHECK(std::abs(r.residual) <= 3.0 * r.stderr + 0.05);
    CHECK(std::abs(r.measure_term) > 0.05);
    CHECK(std::isfinite(r.truncation));

    // closed form for the law part alone: u = m(mu) e^{(k0 - 1)(T - t)}
    p.Phi = [](std::span<const double>, const MeasureView& m) { return mean_of(m); };
    const auto law = pde_residual(p, t, x, mu, cfg);
    const double u = m0 * std::exp((k0 - 1.0) * (T - t));
    CHECK(std::abs(law.u - u) <= 0.03);
    CHECK(std::abs(law.dt_term - (1.0 - k0) * u) <= 0.1);
    CHECK(std::abs(law.measure_term + (1.0 - k0) * u) <= 0.1);
    CHECK(std::abs(law.spatial_term) <= 1e-9);
    CHECK(std::abs(law.residual) <= law.budget);
  }
  SUBCASE("potential and source")
  {
    p.Phi = [](std::span<const double> y, const MeasureView&) { return std::cos(y[0]); };
    p.V = [](double, std::span<const double> y, const MeasureView&) { return -0.2 * std::sin(y[0]) * std::sin(y[0]); };
    p.V_bound = 0.2;
    p.f_source = [](double, std::span<const double> y, const MeasureView& m) { return 0.1 * y[0] + mean_of(m); };
    const auto r = pde_residual(p, t, x, mu, cfg);
    CHECK(r.source_term == doctest::Approx(0.1 * x + m0));
    CHECK(std::abs(r.residual) <= r.budget);
  }
  SUBCASE("refuses when noise dominates")
  {
    p.Phi = [](std::span<const double> y, const MeasureView&) { return y[0] * y[0]; };
    cfg.fk.sim.n_particles = 20;
    cfg.steps.dx_fd = 1e-3;
    CHECK_THROWS_WITH_AS(pde_residual(p, t, x, mu, cfg), doctest::Contains("swamps"), Error);
  }
}

TEST_CASE("tower property")
{
  auto p = ou_problem(0.5, 1.0);
  p.Phi = [](std::span<const double> y, const MeasureView& m) { return y[0] * y[0] + mean_of(m); };
  const auto mu = testutil::gaussian_cloud(10000, 0.5, 0.5, 41);
  auto cfg = config(20000, 1e-2);
  std::vector<double> probes;
  for (int j = -20; j <= 20; ++j)
    probes.push_back(0.25 * j);
  const auto r = fk_tower_check(p, 0.0, 0.5, 0.2, mu, probes, cfg);
  CHECK(std::abs(r.direct - r.composed) <= 3.0 * r.combined_err() + 1e-3);
  CHECK(r.interpolation < 0.05);
  CHECK_THROWS_AS(fk_tower_check(p, 0.5, 0.5, 0.2, mu, probes, cfg), Error);
}
