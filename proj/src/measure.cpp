#include "mkvlab/measure.hpp"

#include "mkvlab/error.hpp"
#include "mkvlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace mkv {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

double normal_cdf(double z)
{
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

} // namespace

EmpiricalMeasure::EmpiricalMeasure(std::vector<double> points, std::vector<double> weights, std::size_t dim)
  : points_(std::move(points))
  , weights_(std::move(weights))
  , dim_(dim)
{
  if (dim_ == 0)
    throw Error("EmpiricalMeasure: dimension must be positive");
  if (weights_.empty())
    throw Error("EmpiricalMeasure: need at least one atom");
  if (points_.size() != weights_.size() * dim_)
    throw Error("EmpiricalMeasure: points size " + std::to_string(points_.size()) + " does not match " +
                std::to_string(weights_.size()) + " atoms of dimension " + std::to_string(dim_));
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw Error("EmpiricalMeasure: weights must be finite and nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw Error("EmpiricalMeasure: weights sum to " + std::to_string(total) + ", expected 1");
  for (double& w : weights_)
    w /= total;
  for (double x : points_)
    if (!std::isfinite(x))
      throw Error("EmpiricalMeasure: non-finite point");
}

EmpiricalMeasure EmpiricalMeasure::uniform(std::vector<double> points, std::size_t dim)
{
  if (dim == 0 || points.empty() || points.size() % dim != 0)
    throw Error("EmpiricalMeasure::uniform: bad point array");
  const std::size_t n = points.size() / dim;
  std::vector<double> w(n, 1.0 / static_cast<double>(n));
  return {std::move(points), std::move(w), dim};
}

EmpiricalMeasure EmpiricalMeasure::dirac(std::span<const double> x)
{
  return {std::vector<double>(x.begin(), x.end()), {1.0}, x.size()};
}

bool EmpiricalMeasure::is_uniform() const
{
  const double w0 = weights_.front();
  return std::all_of(weights_.begin(), weights_.end(), [w0](double w) { return w == w0; });
}

double EmpiricalMeasure::integrate(const std::function<double(std::span<const double>)>& h) const
{
  double acc = 0.0;
  for (std::size_t i = 0; i < size(); ++i)
    acc += weights_[i] * h(point(i));
  return acc;
}

GridSpec GridSpec::covering(double x_min, double x_max, double dx)
{
  if (!(dx > 0.0) || !(x_max > x_min))
    throw Error("GridSpec: need dx > 0 and x_max > x_min");
  const auto cells = static_cast<std::size_t>(std::llround(std::ceil((x_max - x_min) / dx - 1e-9)));
  return {x_min, dx, std::max<std::size_t>(cells, 1)};
}

std::ptrdiff_t GridSpec::cell_of(double x) const
{
  const double k = std::floor((x - x_min) / dx);
  if (k < 0.0 || k >= static_cast<double>(cells))
    return -1;
  return static_cast<std::ptrdiff_t>(k);
}

bool GridSpec::same_as(const GridSpec& o, double tol) const
{
  return cells == o.cells && std::abs(x_min - o.x_min) <= tol * std::max(1.0, std::abs(x_min)) &&
         std::abs(dx - o.dx) <= tol * dx;
}

GridDensity1D::GridDensity1D(GridSpec grid, std::vector<double> values)
  : grid_(grid)
  , values_(std::move(values))
{
  if (values_.size() != grid_.cells)
    throw Error("GridDensity1D: value count does not match grid");
  if (!(grid_.dx > 0.0))
    throw Error("GridDensity1D: dx must be positive");
  for (double v : values_)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw Error("GridDensity1D: values must be finite and nonnegative");
  if (std::abs(mass() - 1.0) > 1e-10)
    throw Error("GridDensity1D: mass " + std::to_string(mass()) + " differs from 1");
}

GridDensity1D GridDensity1D::normalized(GridSpec grid, std::vector<double> values)
{
  double total = 0.0;
  for (double& v : values) {
    if (!std::isfinite(v))
      throw Error("GridDensity1D::normalized: non-finite value");
    v = std::max(v, 0.0);
    total += v;
  }
  total *= grid.dx;
  if (!(total > 0.0))
    throw Error("GridDensity1D::normalized: zero mass");
  for (double& v : values)
    v /= total;
  return {grid, std::move(values)};
}

GridDensity1D GridDensity1D::from_function(GridSpec grid, const std::function<double(double)>& density)
{
  std::vector<double> v(grid.cells);
  for (std::size_t i = 0; i < grid.cells; ++i)
    v[i] = density(grid.center(i));
  return normalized(grid, std::move(v));
}

GridDensity1D GridDensity1D::gaussian(GridSpec grid, double mean, double var)
{
  if (!(var > 0.0))
    throw Error("GridDensity1D::gaussian: variance must be positive");
  const double s = std::sqrt(var);
  // exact cell masses keep narrow Gaussians (s << dx) well-defined
  std::vector<double> v(grid.cells);
  for (std::size_t i = 0; i < grid.cells; ++i) {
    const double a = grid.x_min + static_cast<double>(i) * grid.dx;
    v[i] = (normal_cdf((a + grid.dx - mean) / s) - normal_cdf((a - mean) / s)) / grid.dx;
  }
  return normalized(grid, std::move(v));
}

double GridDensity1D::mass() const
{
  return grid_.dx * std::accumulate(values_.begin(), values_.end(), 0.0);
}

double GridDensity1D::density_at(double x) const
{
  const auto k = grid_.cell_of(x);
  return k < 0 ? 0.0 : values_[static_cast<std::size_t>(k)];
}

double GridDensity1D::integrate(const std::function<double(double)>& h) const
{
  double acc = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (values_[i] != 0.0)
      acc += values_[i] * h(grid_.center(i));
  return acc * grid_.dx;
}

double GridDensity1D::sup_norm() const
{
  return *std::max_element(values_.begin(), values_.end());
}

Moments moments(const EmpiricalMeasure& mu)
{
  const std::size_t d = mu.dim();
  Moments m;
  m.mean.assign(d, 0.0);
  m.covariance.assign(d * d, 0.0);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const auto x = mu.point(i);
    const double w = mu.weight(i);
    for (std::size_t a = 0; a < d; ++a) {
      m.mean[a] += w * x[a];
      m.second_moment += w * x[a] * x[a];
    }
  }
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const auto x = mu.point(i);
    const double w = mu.weight(i);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        m.covariance[a * d + b] += w * (x[a] - m.mean[a]) * (x[b] - m.mean[b]);
  }
  return m;
}

Moments moments(const GridDensity1D& rho)
{
  return moments(grid_to_measure(rho));
}

EmpiricalMeasure grid_to_measure(const GridDensity1D& rho)
{
  const auto& g = rho.grid();
  std::vector<double> x(g.cells), w(g.cells);
  for (std::size_t i = 0; i < g.cells; ++i) {
    x[i] = g.center(i);
    w[i] = rho.values()[i] * g.dx;
  }
  return {std::move(x), std::move(w), 1};
}

GridDensity1D deposit_to_grid(const EmpiricalMeasure& mu, const GridSpec& grid, double* lost_mass)
{
  if (mu.dim() != 1)
    throw Error("deposit_to_grid: only 1-D measures");
  std::vector<double> v(grid.cells, 0.0);
  double lost = 0.0;
  const auto last = static_cast<double>(grid.cells - 1);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double s = (mu.point(i)[0] - grid.x_min) / grid.dx - 0.5;
    const double w = mu.weight(i);
    if (s < -0.5 || s > last + 0.5) {
      lost += w;
      continue;
    }
    // half-cells at the two ends deposit entirely into the edge cell
    const double c = std::clamp(s, 0.0, last);
    const auto k = static_cast<std::size_t>(std::floor(c));
    const double frac = c - static_cast<double>(k);
    v[k] += w * (1.0 - frac);
    if (frac > 0.0)
      v[k + 1] += w * frac;
  }
  if (lost_mass)
    *lost_mass = lost;
  for (double& x : v)
    x /= grid.dx;
  return GridDensity1D::normalized(grid, std::move(v));
}

EmpiricalMeasure pushforward(const EmpiricalMeasure& mu, const VectorField& phi, double t)
{
  const std::size_t d = mu.dim();
  std::vector<double> pts = mu.points();
  std::vector<double> val(d);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    phi(mu.point(i), val);
    for (std::size_t a = 0; a < d; ++a) {
      if (!std::isfinite(val[a]))
        throw Error("pushforward: direction field is not finite at atom " + std::to_string(i));
      pts[i * d + a] += t * val[a];
    }
  }
  return {std::move(pts), mu.weights(), d};
}

EmpiricalMeasure pushforward(const EmpiricalMeasure& mu, const std::function<double(double)>& phi, double t)
{
  if (mu.dim() != 1)
    throw Error("pushforward: scalar direction needs a 1-D measure");
  return pushforward(mu, VectorField([&phi](std::span<const double> x, std::span<double> out) { out[0] = phi(x[0]); }), t);
}

double default_bandwidth(const EmpiricalMeasure& mu)
{
  const auto m = moments(mu);
  double var = 0.0;
  for (std::size_t a = 0; a < mu.dim(); ++a)
    var += m.covariance[a * mu.dim() + a];
  var /= static_cast<double>(mu.dim());
  const double n = static_cast<double>(mu.size());
  const double sd = std::sqrt(var * n / std::max(n - 1.0, 1.0));
  const double h = std::pow(n, -0.2) * sd;
  return h > 0.0 ? h : 1e-3;
}

GridDensity1D kde_density(const EmpiricalMeasure& mu, const GridSpec& grid, double bandwidth)
{
  if (mu.dim() != 1)
    throw Error("kde_density: only 1-D measures");
  if (!(bandwidth > 0.0))
    throw Error("kde_density: bandwidth must be positive");
  const double h = bandwidth;
  const double reach = 8.0 * h;
  std::vector<double> v(grid.cells, 0.0);
  double outside = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double x = mu.point(i)[0];
    const double w = mu.weight(i);
    outside += w * (normal_cdf((grid.x_min - x) / h) + normal_cdf((x - grid.x_max()) / h));
    const auto lo = static_cast<std::ptrdiff_t>(std::floor((x - reach - grid.x_min) / grid.dx));
    const auto hi = static_cast<std::ptrdiff_t>(std::ceil((x + reach - grid.x_min) / grid.dx));
    const auto first = std::max<std::ptrdiff_t>(lo, 0);
    const auto last = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(grid.cells) - 1);
    const double c = w * kInvSqrt2Pi / h;
    for (auto k = first; k <= last; ++k) {
      const double z = (grid.center(static_cast<std::size_t>(k)) - x) / h;
      v[static_cast<std::size_t>(k)] += c * std::exp(-0.5 * z * z);
    }
  }
  if (outside > 1e-6)
    throw Error("kde_density: grid too small, kernel mass " + std::to_string(outside) + " falls outside");
  return GridDensity1D::normalized(grid, std::move(v));
}

GridDensity1D kde_density_binned(const EmpiricalMeasure& mu, const GridSpec& grid, double bandwidth)
{
  if (mu.dim() != 1)
    throw Error("kde_density_binned: only 1-D measures");
  if (!(bandwidth > 0.0))
    throw Error("kde_density_binned: bandwidth must be positive");
  const std::size_t m = grid.cells;
  std::vector<double> bins(m, 0.0);
  const auto last = static_cast<double>(m - 1);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double s = std::clamp((mu.point(i)[0] - grid.x_min) / grid.dx - 0.5, 0.0, last);
    const auto k = static_cast<std::size_t>(s);
    const double frac = s - static_cast<double>(k);
    bins[k] += mu.weight(i) * (1.0 - frac);
    if (k + 1 < m)
      bins[k + 1] += mu.weight(i) * frac;
  }
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(7.0 * bandwidth / grid.dx));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (std::ptrdiff_t j = -radius; j <= radius; ++j) {
    const double z = static_cast<double>(j) * grid.dx / bandwidth;
    kernel[static_cast<std::size_t>(j + radius)] = std::exp(-0.5 * z * z);
  }
  std::vector<double> v(m, 0.0);
  const auto mm = static_cast<std::ptrdiff_t>(m);
  for (std::ptrdiff_t k = 0; k < mm; ++k) {
    const double b = bins[static_cast<std::size_t>(k)];
    if (b == 0.0)
      continue;
    const auto first = std::max(-radius, -k);
    const auto stop = std::min(radius, mm - 1 - k);
    for (auto j = first; j <= stop; ++j)
      v[static_cast<std::size_t>(k + j)] += b * kernel[static_cast<std::size_t>(j + radius)];
  }
  return GridDensity1D::normalized(grid, std::move(v));
}

EmpiricalMeasure sample_density(const GridDensity1D& rho, std::size_t n, std::uint64_t seed, std::uint64_t stream)
{
  if (n == 0)
    throw Error("sample_density: n must be positive");
  const auto& g = rho.grid();
  std::vector<double> cdf(g.cells + 1, 0.0);
  for (std::size_t i = 0; i < g.cells; ++i)
    cdf[i + 1] = cdf[i] + rho.values()[i] * g.dx;
  const double total = cdf.back();
  const NormalStream rng(seed, stream);
  std::vector<double> x(n);
  for (std::size_t j = 0; j < n; j += 4) {
    const auto u = rng.uniforms(j / 4);
    for (std::size_t r = 0; r < 4 && j + r < n; ++r) {
      const double q = u[r] * total;
      auto it = std::upper_bound(cdf.begin() + 1, cdf.end(), q);
      auto k = static_cast<std::size_t>(std::distance(cdf.begin() + 1, it));
      k = std::min(k, g.cells - 1);
      const double mass = cdf[k + 1] - cdf[k];
      const double frac = mass > 0.0 ? std::clamp((q - cdf[k]) / mass, 0.0, 1.0) : 0.5;
      x[j + r] = g.x_min + (static_cast<double>(k) + frac) * g.dx;
    }
  }
  return EmpiricalMeasure::uniform(std::move(x), 1);
}

double l1_distance(const GridDensity1D& a, const GridDensity1D& b)
{
  if (!a.grid().same_as(b.grid()))
    throw Error("l1_distance: grids differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += std::abs(a.values()[i] - b.values()[i]);
  return acc * a.grid().dx;
}

} // namespace mkv
