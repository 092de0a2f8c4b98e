#include "doctest.h"

#include "mkvlab/coefficients.hpp"
#include "mkvlab/error.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace mkv;

namespace {

GridDensity1D flat_density(double u, double x_min, double dx, std::size_t cells)
{
  // values u on the given cells, the remainder of the mass spread elsewhere
  const GridSpec g{x_min, dx, cells};
  std::vector<double> v(cells, u);
  return GridDensity1D::normalized(g, v);
}

} // namespace

TEST_CASE("linear beta reduces to Brownian coefficients")
{
  const auto c = nldbm_coefficients(NLDBMParams::linear(0.0));
  const auto g = GridSpec::covering(-5.0, 5.0, 0.1);
  const MeasureView mu(GridDensity1D::gaussian(g, 0.0, 1.0));
  for (double x : {-3.0, 0.0, 1.2, 7.0}) {
    CHECK(c.a1(0.0, x, mu) == doctest::Approx(1.0));
    CHECK(c.b1(0.0, x, mu) == 0.0);
  }
}

TEST_CASE("canonical NLDBM values")
{
  const auto p = NLDBMParams::canonical();
  const auto c = nldbm_coefficients(p);
  // a uniform density equal to one on [0, 1]
  const MeasureView mu(flat_density(1.0, 0.0, 0.1, 10));
  CHECK(mu.density_at(0.55) == doctest::Approx(1.0));
  CHECK(c.a1(0.0, 0.55, mu) == doctest::Approx(2.0 + std::atan(1.0)).epsilon(1e-12));
  CHECK(c.a1(0.0, 0.55, mu) == doctest::Approx(2.7854).epsilon(1e-4));
  // off the support u = 0 and beta(0)/0 := beta'(0) = 3
  CHECK(c.a1(0.0, -4.0, mu) == doctest::Approx(3.0));
  for (double x : {-10.0, -1.0, 0.0, 0.3, 4.0, 100.0}) {
    CHECK(p.D(x) == doctest::Approx(-x / std::sqrt(1.0 + x * x)));
    CHECK(std::abs(p.D(x)) <= 1.0);
  }
  CHECK(c.b1(0.0, 0.55, mu) == doctest::Approx(0.5 * p.D(0.55)));
}

TEST_CASE("Nemytskii coefficients only see the local density")
{
  const auto c = nldbm_coefficients(NLDBMParams::canonical());
  const GridSpec g{-2.0, 0.5, 8};
  std::vector<double> v1 = {0.1, 0.2, 0.3, 0.4, 0.5, 0.3, 0.2, 0.0};
  std::vector<double> v2 = {0.4, 0.1, 0.1, 0.4, 0.5, 0.4, 0.1, 0.0};
  const MeasureView m1(GridDensity1D(g, v1)), m2(GridDensity1D(g, v2));
  // cells 3 and 4 carry the same values in both
  for (double x : {-0.3, 0.2}) {
    CHECK(c.a1(0.0, x, m1) == c.a1(0.0, x, m2));
    CHECK(c.b1(0.0, x, m1) == c.b1(0.0, x, m2));
  }
  CHECK_THROWS_AS(c.a1(0.0, 0.0, MeasureView(EmpiricalMeasure::dirac(0.0))), Error);
}

TEST_CASE("diffusion bounded below by gamma")
{
  const auto p = NLDBMParams::canonical();
  const auto c = nldbm_coefficients(p);
  testutil::Uniform u(4);
  const GridSpec g{-1.0, 0.25, 8};
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> v(8);
    for (double& e : v)
      e = u(0.0, 5.0);
    const MeasureView mu(GridDensity1D::normalized(g, v));
    const double x = u(-1.5, 1.5);
    const double a = c.a1(0.0, x, mu);
    CHECK(a >= p.gamma - 1e-12);
    CHECK(a <= p.gamma1 + 1e-12);
  }
}

TEST_CASE("mean-field OU constants")
{
  auto r = meanfield_ou_coefficients(1.0, 0.0, 1.0);
  CHECK(r.constants.lambda == 2.0);
  CHECK(r.constants.kappa == 0.0);
  r = meanfield_ou_coefficients(1.0, 0.5, 1.0);
  CHECK(r.constants.lambda == 1.5);
  CHECK(r.constants.kappa == 0.5);
  CHECK(r.constants.lambda - r.constants.kappa == 1.0);
  CHECK(r.constants.K == 2.0);
}

TEST_CASE("mean-field OU satisfies the monotonicity condition on samples")
{
  for (double k0 : {0.5, -0.5, 0.0, 1.5}) {
    const auto r = meanfield_ou_coefficients(1.0, k0, 1.0);
    const auto rep = validate_hypotheses(r.coeffs, r.constants);
    CHECK(rep.passed());
    CHECK(rep.at("monotone").samples == 10000);
  }
  // larger lambda0 still passes thanks to the growth constant
  const auto big = meanfield_ou_coefficients(5.0, 0.3, 0.5, 2);
  CHECK(validate_hypotheses(big.coeffs, big.constants).passed());

  // overstated lambda must be caught
  auto r = meanfield_ou_coefficients(1.0, 0.5, 1.0);
  r.constants.lambda = 1.8;
  CHECK_FALSE(validate_hypotheses(r.coeffs, r.constants).at("monotone").passed);
}

TEST_CASE("direct evaluation of the monotone inequality")
{
  const auto r = meanfield_ou_coefficients(1.0, 0.5, 1.0);
  testutil::Uniform u(8);
  double worst = INFINITY;
  for (int n = 0; n < 10000; ++n) {
    const double x = u(-10, 10), y = u(-10, 10);
    const double a0 = u(-10, 10), a1 = u(-10, 10), b0 = u(-10, 10), b1 = u(-10, 10);
    const double w2sq = 0.5 * std::min((a0 - b0) * (a0 - b0) + (a1 - b1) * (a1 - b1),
                                       (a0 - b1) * (a0 - b1) + (a1 - b0) * (a1 - b0));
    const double bx = -x + 0.5 * 0.5 * (a0 + a1), by = -y + 0.5 * 0.5 * (b0 + b1);
    const double lhs = 2.0 * (bx - by) * (x - y);
    worst = std::min(worst, r.constants.kappa * w2sq - r.constants.lambda * (x - y) * (x - y) - lhs + 1e-9);
  }
  CHECK(worst >= 0.0);
}

TEST_CASE("mean-field OU is affine in x and in the mean")
{
  const auto r = meanfield_ou_coefficients(0.7, 0.4, 1.2);
  const MeasureView mu(EmpiricalMeasure::uniform({0.0, 2.0}));
  auto b = [&](double x) { return r.coeffs.b1(0.0, x, mu); };
  CHECK(b(0.5) == doctest::Approx(0.5 * b(0.0) + 0.5 * b(1.0)).epsilon(1e-14));
  CHECK(b(2.0) == doctest::Approx(2.0 * b(1.0) - b(0.0)).epsilon(1e-14));
  auto bm = [&](double m) { return r.coeffs.b1(0.0, 0.3, MeasureView(EmpiricalMeasure::dirac(m))); };
  CHECK(bm(0.5) == doctest::Approx(0.5 * bm(0.0) + 0.5 * bm(1.0)).epsilon(1e-14));
  CHECK(r.coeffs.a1(0.0, 0.3, mu) == doctest::Approx(1.44));
}

TEST_CASE("NLDBM structure conditions")
{
  const auto rep = validate_hypotheses(NLDBMParams::canonical());
  CHECK(rep.passed());
  for (const auto& c : rep.checks)
    CHECK_MESSAGE(c.passed, c.name);

  auto sq = NLDBMParams::canonical();
  sq.beta = [](double r) { return r * r; };
  sq.beta_prime = [](double r) { return 2.0 * r; };
  const auto bad = validate_hypotheses(sq);
  CHECK_FALSE(bad.passed());
  CHECK_FALSE(bad.at("beta_prime_lower").passed);
  CHECK(bad.at("beta_zero").passed);

  auto low = NLDBMParams::canonical();
  low.set_potential(0.5, 0.5);
  CHECK_FALSE(validate_hypotheses(low).at("Phi_lower").passed);

  auto quarter = NLDBMParams::canonical();
  quarter.set_potential(1.0, 0.25);
  CHECK(validate_hypotheses(quarter).passed());
}

TEST_CASE("time homogeneity spot check")
{
  auto c = heat_coefficients(1.0);
  c.b = [](double t, std::span<const double>, const MeasureView&, std::span<double> out) { out[0] = std::sin(t); };
  c.b_bar = c.b;
  MonotonicityConstants k{10.0, 0.0, 0.0, 0.0, 0.0};
  CHECK_FALSE(validate_hypotheses(c, k).at("time_homogeneous").passed);
  c.time_homogeneous = false;
  CHECK_THROWS_AS(validate_hypotheses(c, k).at("time_homogeneous"), Error);
}
