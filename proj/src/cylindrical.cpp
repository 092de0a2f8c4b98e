#include "mkvlab/cylindrical.hpp"

#include "mkvlab/error.hpp"
#include "mkvlab/rng.hpp"

#include <cmath>
#include <limits>

namespace mkv {

double TestFunction::d1(double x) const
{
  double g = 0.0;
  gradient(std::span<const double>(&x, 1), std::span<double>(&g, 1));
  return g;
}

double TestFunction::d2(double x) const
{
  double h = 0.0;
  hessian(std::span<const double>(&x, 1), std::span<double>(&h, 1));
  return h;
}

TestFunction TestFunction::from_1d(std::function<double(double)> f, std::function<double(double)> df,
                                   std::function<double(double)> d2f, std::string name)
{
  TestFunction t;
  t.dim = 1;
  t.value = [f](std::span<const double> x) { return f(x[0]); };
  t.gradient = [df](std::span<const double> x, std::span<double> out) { out[0] = df(x[0]); };
  t.hessian = [d2f](std::span<const double> x, std::span<double> out) { out[0] = d2f(x[0]); };
  t.name = std::move(name);
  return t;
}

TestFunction TestFunction::constant(double c, std::size_t dim)
{
  TestFunction t;
  t.dim = dim;
  t.value = [c](std::span<const double>) { return c; };
  t.gradient = [](std::span<const double>, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
  t.hessian = [](std::span<const double>, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
  t.name = "const";
  return t;
}

TestFunction TestFunction::monomial(int p)
{
  if (p < 0)
    throw Error("TestFunction::monomial: negative power");
  return from_1d([p](double x) { return std::pow(x, p); },
                 [p](double x) { return p == 0 ? 0.0 : p * std::pow(x, p - 1); },
                 [p](double x) { return p < 2 ? 0.0 : p * (p - 1) * std::pow(x, p - 2); },
                 "x^" + std::to_string(p));
}

TestFunction TestFunction::sine(double k, double phase)
{
  return from_1d([k, phase](double x) { return std::sin(k * x + phase); },
                 [k, phase](double x) { return k * std::cos(k * x + phase); },
                 [k, phase](double x) { return -k * k * std::sin(k * x + phase); }, "sin");
}

TestFunction TestFunction::gaussian_bump(double c, double w)
{
  return from_1d(
    [c, w](double x) {
      const double z = (x - c) / w;
      return std::exp(-0.5 * z * z);
    },
    [c, w](double x) {
      const double z = (x - c) / w;
      return -z / w * std::exp(-0.5 * z * z);
    },
    [c, w](double x) {
      const double z = (x - c) / w;
      return (z * z - 1.0) / (w * w) * std::exp(-0.5 * z * z);
    },
    "bump");
}

TestFunction TestFunction::coordinate(std::size_t k, std::size_t dim)
{
  TestFunction t;
  t.dim = dim;
  t.value = [k](std::span<const double> x) { return x[k]; };
  t.gradient = [k](std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    out[k] = 1.0;
  };
  t.hessian = [](std::span<const double>, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
  t.name = "x" + std::to_string(k);
  return t;
}

TestFunction TestFunction::squared_norm(std::size_t dim)
{
  TestFunction t;
  t.dim = dim;
  t.value = [](std::span<const double> x) {
    double s = 0.0;
    for (double v : x)
      s += v * v;
    return s;
  };
  t.gradient = [](std::span<const double> x, std::span<double> out) {
    for (std::size_t a = 0; a < x.size(); ++a)
      out[a] = 2.0 * x[a];
  };
  t.hessian = [dim](std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t a = 0; a < dim; ++a)
      out[a * dim + a] = 2.0;
  };
  t.name = "|x|^2";
  return t;
}

OuterFunction OuterFunction::identity()
{
  return {1, [](std::span<const double> r) { return r[0]; },
          [](std::span<const double>, std::span<double> g) { g[0] = 1.0; }, "id"};
}

OuterFunction OuterFunction::square()
{
  return {1, [](std::span<const double> r) { return r[0] * r[0]; },
          [](std::span<const double> r, std::span<double> g) { g[0] = 2.0 * r[0]; }, "sq"};
}

OuterFunction OuterFunction::linear(std::vector<double> c)
{
  const std::size_t n = c.size();
  return {n,
          [c](std::span<const double> r) {
            double s = 0.0;
            for (std::size_t i = 0; i < c.size(); ++i)
              s += c[i] * r[i];
            return s;
          },
          [c](std::span<const double>, std::span<double> g) { std::copy(c.begin(), c.end(), g.begin()); }, "lin"};
}

OuterFunction OuterFunction::product(std::size_t n)
{
  return {n,
          [](std::span<const double> r) {
            double p = 1.0;
            for (double v : r)
              p *= v;
            return p;
          },
          [](std::span<const double> r, std::span<double> g) {
            for (std::size_t i = 0; i < r.size(); ++i) {
              double p = 1.0;
              for (std::size_t j = 0; j < r.size(); ++j)
                if (j != i)
                  p *= r[j];
              g[i] = p;
            }
          },
          "prod"};
}

OuterFunction OuterFunction::constant(double c, std::size_t n)
{
  return {n, [c](std::span<const double>) { return c; },
          [](std::span<const double>, std::span<double> g) { std::fill(g.begin(), g.end(), 0.0); }, "const"};
}

CylindricalFunction::CylindricalFunction(std::vector<TestFunction> inner, OuterFunction outer)
  : inner_(std::move(inner))
  , outer_(std::move(outer))
{
  if (inner_.empty())
    throw Error("CylindricalFunction: need at least one inner test function");
  if (outer_.arity != inner_.size())
    throw Error("CylindricalFunction: outer arity does not match number of inner tests");
  for (const auto& h : inner_)
    if (h.dim != inner_.front().dim)
      throw Error("CylindricalFunction: inner tests disagree on dimension");
}

CylindricalFunction CylindricalFunction::constant(double c, std::size_t dim)
{
  return {{TestFunction::constant(1.0, dim)}, OuterFunction::constant(c)};
}

CylindricalFunction CylindricalFunction::linear(TestFunction h)
{
  return {{std::move(h)}, OuterFunction::identity()};
}

CylindricalFunction CylindricalFunction::mean(std::size_t k, std::size_t dim)
{
  return linear(TestFunction::coordinate(k, dim));
}

std::vector<double> CylindricalFunction::integrals(const EmpiricalMeasure& mu) const
{
  std::vector<double> r(inner_.size());
  for (std::size_t i = 0; i < inner_.size(); ++i)
    r[i] = mu.integrate(inner_[i].value);
  return r;
}

std::vector<double> CylindricalFunction::integrals(const GridDensity1D& rho) const
{
  std::vector<double> r(inner_.size());
  for (std::size_t i = 0; i < inner_.size(); ++i)
    r[i] = rho.integrate([&h = inner_[i]](double x) { return h(x); });
  return r;
}

double CylindricalFunction::operator()(const EmpiricalMeasure& mu) const
{
  const auto r = integrals(mu);
  return outer_.value(r);
}

double CylindricalFunction::operator()(const GridDensity1D& rho) const
{
  const auto r = integrals(rho);
  return outer_.value(r);
}

std::vector<double> CylindricalFunction::outer_gradient(const EmpiricalMeasure& mu) const
{
  const auto r = integrals(mu);
  std::vector<double> g(r.size());
  outer_.gradient(r, g);
  return g;
}

VectorField intrinsic_gradient(const CylindricalFunction& F, const EmpiricalMeasure& mu)
{
  if (F.dim() != mu.dim())
    throw Error("intrinsic_gradient: dimension mismatch");
  auto coef = F.outer_gradient(mu);
  return [coef = std::move(coef), tests = F.inner()](std::span<const double> x, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    std::vector<double> g(out.size());
    for (std::size_t i = 0; i < tests.size(); ++i) {
      if (coef[i] == 0.0)
        continue;
      tests[i].gradient(x, g);
      for (std::size_t a = 0; a < out.size(); ++a)
        out[a] += coef[i] * g[a];
    }
  };
}

double gradient_pairing(const CylindricalFunction& F, const EmpiricalMeasure& mu, const VectorField& phi)
{
  const auto grad = intrinsic_gradient(F, mu);
  const std::size_t d = mu.dim();
  std::vector<double> g(d), p(d);
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    grad(mu.point(i), g);
    phi(mu.point(i), p);
    double dot = 0.0;
    for (std::size_t a = 0; a < d; ++a)
      dot += g[a] * p[a];
    acc += mu.weight(i) * dot;
  }
  return acc;
}

namespace {

class Draws
{
public:
  explicit Draws(std::uint64_t seed)
    : rng_(seed, 0x63796cull)
  {}
  double operator()(double lo, double hi)
  {
    if (k_ == 4) {
      buf_ = rng_.uniforms(step_++);
      k_ = 0;
    }
    return lo + (hi - lo) * buf_[k_++];
  }

private:
  NormalStream rng_;
  std::uint64_t step_ = 0;
  std::array<double, 4> buf_{};
  int k_ = 4;
};

} // namespace

CylindricalFunction random_cylindrical(std::uint64_t seed)
{
  Draws u(seed);
  const auto n = static_cast<std::size_t>(1 + std::floor(u(0.0, 3.0)));
  std::vector<TestFunction> inner;
  for (std::size_t i = 0; i < n; ++i) {
    const double kind = u(0.0, 3.0);
    if (kind < 1.0) {
      inner.push_back(TestFunction::sine(u(0.3, 2.0), u(0.0, 3.0)));
    } else if (kind < 2.0) {
      inner.push_back(TestFunction::gaussian_bump(u(-1.0, 1.0), u(0.5, 2.0)));
    } else {
      const double a = u(-1.0, 1.0), b = u(-0.5, 0.5), c = u(-0.3, 0.3);
      inner.push_back(TestFunction::from_1d([=](double x) { return x * (a + x * (b + c * x)); },
                                            [=](double x) { return a + x * (2 * b + 3 * c * x); },
                                            [=](double x) { return 2 * b + 6 * c * x; }, "cubic"));
    }
  }
  const double outer = u(0.0, 3.0);
  if (outer < 1.0 || n > 1) {
    if (outer < 1.0) {
      std::vector<double> c(n);
      for (double& v : c)
        v = u(-2.0, 2.0);
      return CylindricalFunction(std::move(inner), OuterFunction::linear(std::move(c)));
    }
    return CylindricalFunction(std::move(inner), OuterFunction::product(n));
  }
  return CylindricalFunction(std::move(inner), OuterFunction::square());
}

VectorField random_direction(std::uint64_t seed)
{
  Draws u(seed ^ 0x9e3779b97f4a7c15ull);
  const double a = u(-1.0, 1.0), b = u(-1.0, 1.0), c = u(-1.0, 1.0), k = u(0.5, 2.0);
  return [=](std::span<const double> x, std::span<double> out) { out[0] = a + b * x[0] + c * std::sin(k * x[0]); };
}

GradientStudy gradient_fd_study(const CylindricalFunction& F, const EmpiricalMeasure& mu, const VectorField& phi,
                                double eps0, int levels, double fine_eps)
{
  if (!(eps0 > 0.0) || !(fine_eps > 0.0) || levels < 2)
    throw Error("gradient_fd_study: need positive steps and at least two levels");
  GradientStudy s;
  s.pairing = gradient_pairing(F, mu, phi);
  s.fine_eps = fine_eps;
  auto central = [&](double e) { return (F(pushforward(mu, phi, e)) - F(pushforward(mu, phi, -e))) / (2.0 * e); };
  double e = eps0;
  for (int l = 0; l < levels; ++l, e *= 0.5) {
    s.eps.push_back(e);
    s.central_error.push_back(std::abs(central(e) - s.pairing));
  }
  // errors at rounding level carry no order information
  const double floor = 1e-12 * std::max(1.0, std::abs(s.pairing));
  if (s.central_error.front() <= floor) {
    s.observed_order = std::numeric_limits<double>::infinity();
  } else {
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double m = static_cast<double>(levels);
    for (int l = 0; l < levels; ++l) {
      const double lx = std::log(s.eps[l]), ly = std::log(std::max(s.central_error[l], floor));
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
    }
    s.observed_order = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  }
  s.rel_error_fine = std::abs(central(fine_eps) - s.pairing) / std::max(std::abs(s.pairing), 1e-300);
  return s;
}

} // namespace mkv
