#include "mkvlab/wasserstein.hpp"

#include "mkvlab/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include <boost/math/distributions/normal.hpp>

namespace mkv {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b)
{
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

std::vector<std::size_t> sorted_order(const EmpiricalMeasure& mu)
{
  std::vector<std::size_t> idx(mu.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return mu.point(a)[0] < mu.point(b)[0]; });
  return idx;
}

void check_dims(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu)
{
  if (mu.dim() != nu.dim())
    throw Error("wasserstein2: dimension mismatch (" + std::to_string(mu.dim()) + " vs " + std::to_string(nu.dim()) + ")");
}

// Weighted RMS distance to a single atom; exact whenever one side is a Dirac.
double dirac_distance(const EmpiricalMeasure& cloud, std::span<const double> atom)
{
  double s = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    s += cloud.weight(i) * sq_dist(cloud.point(i), atom);
  return std::sqrt(s);
}

double log_sum_exp(const std::vector<double>& v)
{
  const double c = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(c))
    return c;
  double s = 0.0;
  for (double x : v)
    s += std::exp(x - c);
  return c + std::log(s);
}

} // namespace

TransportPlan exact1d_plan(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu)
{
  check_dims(mu, nu);
  if (mu.dim() != 1)
    throw Error("exact1d_plan: needs 1-D measures");
  TransportPlan plan;
  plan.rows = mu.size();
  plan.cols = nu.size();
  plan.coupling.assign(plan.rows * plan.cols, 0.0);
  const auto ia = sorted_order(mu);
  const auto ib = sorted_order(nu);
  std::size_t a = 0, b = 0;
  double ra = mu.weight(ia[0]), rb = nu.weight(ib[0]);
  // north-west corner rule on sorted atoms
  while (a < ia.size() && b < ib.size()) {
    const double m = std::min(ra, rb);
    const std::size_t i = ia[a], j = ib[b];
    plan.coupling[i * plan.cols + j] += m;
    const double dxy = mu.point(i)[0] - nu.point(j)[0];
    plan.cost += m * dxy * dxy;
    ra -= m;
    rb -= m;
    const bool adv_a = ra <= 1e-15 && a + 1 < ia.size();
    const bool adv_b = rb <= 1e-15 && b + 1 < ib.size();
    if (!adv_a && !adv_b)
      break;
    if (adv_a)
      ra = mu.weight(ia[++a]);
    if (adv_b)
      rb = nu.weight(ib[++b]);
  }
  plan.cost = std::max(plan.cost, 0.0);
  return plan;
}

TransportPlan sinkhorn_plan(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const SinkhornOptions& opts)
{
  check_dims(mu, nu);
  const std::size_t n = mu.size(), m = nu.size();
  std::vector<double> cost(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      cost[i * m + j] = sq_dist(mu.point(i), nu.point(j));

  double eps = opts.epsilon;
  if (eps <= 0.0) {
    std::vector<double> c = cost;
    auto mid = c.begin() + static_cast<std::ptrdiff_t>(c.size() / 2);
    std::nth_element(c.begin(), mid, c.end());
    eps = 1e-2 * *mid;
    if (!(eps > 0.0))
      eps = 1e-2 * (*std::max_element(cost.begin(), cost.end()) + 1e-12);
  }

  std::vector<double> loga(n), logb(m);
  for (std::size_t i = 0; i < n; ++i)
    loga[i] = mu.weight(i) > 0 ? std::log(mu.weight(i)) : -INFINITY;
  for (std::size_t j = 0; j < m; ++j)
    logb[j] = nu.weight(j) > 0 ? std::log(nu.weight(j)) : -INFINITY;

  std::vector<double> f(n, 0.0), g(m, 0.0), buf;
  TransportPlan plan;
  plan.rows = n;
  plan.cols = m;
  plan.coupling.assign(n * m, 0.0);
  double err = INFINITY;
  int it = 0;
  while (it < opts.max_iterations) {
    buf.resize(m);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j)
        buf[j] = (g[j] - cost[i * m + j]) / eps + logb[j];
      f[i] = -eps * log_sum_exp(buf);
    }
    buf.resize(n);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i)
        buf[i] = (f[i] - cost[i * m + j]) / eps + loga[i];
      g[j] = -eps * log_sum_exp(buf);
    }
    ++it;
    // columns match exactly after the g-update; check rows
    if (it % 10 == 0 || it == opts.max_iterations) {
      err = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < m; ++j)
          row += std::exp((f[i] + g[j] - cost[i * m + j]) / eps + loga[i] + logb[j]);
        err += std::abs(row - mu.weight(i));
      }
      if (err <= opts.tolerance)
        break;
    }
  }
  plan.iterations = it;
  plan.marginal_error = err;
  if (err > opts.tolerance)
    throw ConvergenceError("sinkhorn: marginal error above tolerance after " + std::to_string(it) + " iterations", err);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      plan.coupling[i * m + j] = std::exp((f[i] + g[j] - cost[i * m + j]) / eps + loga[i] + logb[j]);

  // Round onto the exact coupling set (Altschuler, Weed & Rigollet 2017):
  // shrink overfull rows and columns, then spread the deficit as a rank-one
  // correction. The result is feasible, so its cost is >= the optimum.
  std::vector<double> row(n, 0.0), col(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j)
      row[i] += plan.coupling[i * m + j];
    const double s = row[i] > mu.weight(i) ? mu.weight(i) / row[i] : 1.0;
    for (std::size_t j = 0; j < m; ++j)
      plan.coupling[i * m + j] *= s;
  }
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i)
      col[j] += plan.coupling[i * m + j];
    const double s = col[j] > nu.weight(j) ? nu.weight(j) / col[j] : 1.0;
    for (std::size_t i = 0; i < n; ++i)
      plan.coupling[i * m + j] *= s;
  }
  std::fill(row.begin(), row.end(), 0.0);
  std::fill(col.begin(), col.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      row[i] += plan.coupling[i * m + j];
      col[j] += plan.coupling[i * m + j];
    }
  double deficit = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    deficit += row[i] = std::max(mu.weight(i) - row[i], 0.0);
  for (std::size_t j = 0; j < m; ++j)
    col[j] = std::max(nu.weight(j) - col[j], 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (deficit > 0.0)
        plan.coupling[i * m + j] += row[i] * col[j] / deficit;
      plan.cost += plan.coupling[i * m + j] * cost[i * m + j];
    }
  return plan;
}

double wasserstein2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, W2Method method, const SinkhornOptions& opts)
{
  check_dims(mu, nu);
  if (nu.size() == 1)
    return dirac_distance(mu, nu.point(0));
  if (mu.size() == 1)
    return dirac_distance(nu, mu.point(0));
  if (method == W2Method::exact1d) {
    if (mu.dim() != 1)
      throw Error("wasserstein2: exact1d needs dimension 1");
    return std::sqrt(exact1d_plan(mu, nu).cost);
  }
  return std::sqrt(sinkhorn_plan(mu, nu, opts).cost);
}

namespace {

//! Sorted atoms with cumulative weights: F jumps to cum[k] at xs[k].
void step_cdf(const EmpiricalMeasure& mu, std::vector<double>& xs, std::vector<double>& cum)
{
  if (mu.dim() != 1)
    throw Error("wasserstein1: needs dimension 1");
  const auto idx = sorted_order(mu);
  double acc = 0.0;
  for (std::size_t i : idx) {
    acc += mu.weights()[i];
    xs.push_back(mu.point(i)[0]);
    cum.push_back(acc);
  }
}

//! int_a^b |c0 + c1 (x - a)| dx
double abs_linear(double a, double b, double c0, double c1)
{
  const double len = b - a;
  if (len <= 0.0)
    return 0.0;
  const double c_end = c0 + c1 * len;
  if (c0 * c_end >= 0.0)
    return 0.5 * len * (std::abs(c0) + std::abs(c_end));
  const double root = -c0 / c1;
  return 0.5 * root * std::abs(c0) + 0.5 * (len - root) * std::abs(c_end);
}

} // namespace

double wasserstein1(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu)
{
  std::vector<double> xa, ca, xb, cb;
  step_cdf(mu, xa, ca);
  step_cdf(nu, xb, cb);
  std::size_t i = 0, j = 0;
  double fa = 0.0, fb = 0.0, prev = std::min(xa.front(), xb.front()), total = 0.0;
  while (i < xa.size() || j < xb.size()) {
    const double next = j == xb.size() || (i < xa.size() && xa[i] <= xb[j]) ? xa[i] : xb[j];
    total += std::abs(fa - fb) * (next - prev);
    while (i < xa.size() && xa[i] == next)
      fa = ca[i++];
    while (j < xb.size() && xb[j] == next)
      fb = cb[j++];
    prev = next;
  }
  return total;
}

double wasserstein1(const EmpiricalMeasure& mu, const GridDensity1D& rho)
{
  std::vector<double> xs, cum;
  step_cdf(mu, xs, cum);
  const auto& g = rho.grid();
  const auto& v = rho.values();
  const double mass = rho.mass();
  double total = 0.0, fa = 0.0, fr = 0.0;
  std::size_t k = 0;
  // mass of the cloud left of the grid
  double prev = std::min(xs.front(), g.x_min);
  for (; k < xs.size() && xs[k] < g.x_min; ++k) {
    total += fa * (xs[k] - prev);
    fa = cum[k];
    prev = xs[k];
  }
  total += fa * (g.x_min - prev);
  prev = g.x_min;
  for (std::size_t c = 0; c < g.cells; ++c) {
    const double hi = g.x_min + g.dx * static_cast<double>(c + 1);
    const double slope = v[c] / mass;
    for (; k < xs.size() && xs[k] < hi; ++k) {
      total += abs_linear(prev, xs[k], fr - fa, slope);
      fr += slope * (xs[k] - prev);
      fa = cum[k];
      prev = xs[k];
    }
    total += abs_linear(prev, hi, fr - fa, slope);
    fr += slope * (hi - prev);
    prev = hi;
  }
  fr = 1.0;
  for (; k < xs.size(); ++k) {
    total += std::abs(fr - fa) * (xs[k] - prev);
    fa = cum[k];
    prev = xs[k];
  }
  return total;
}

double wasserstein2_to_gaussian(const EmpiricalMeasure& mu, double mean, double var)
{
  if (mu.dim() != 1)
    throw Error("wasserstein2_to_gaussian: needs dimension 1");
  if (!(var > 0.0))
    throw Error("wasserstein2_to_gaussian: variance must be positive");
  const double s = std::sqrt(var);
  const boost::math::normal_distribution<double> std_normal;
  const auto idx = sorted_order(mu);
  // On [qa, qb] with z = Phi^{-1}(q):  int z dq = phi(za) - phi(zb),
  // int z^2 dq = [Phi(z) - z phi(z)]_{za}^{zb}.
  auto phi = [](double z) { return std::isfinite(z) ? std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi) : 0.0; };
  auto zphi = [&](double z) { return std::isfinite(z) ? z * phi(z) : 0.0; };
  auto zq = [&](double q) -> double {
    if (q <= 0.0)
      return -INFINITY;
    if (q >= 1.0)
      return INFINITY;
    return boost::math::quantile(std_normal, q);
  };
  double total = 0.0;
  double qa = 0.0;
  double za = -INFINITY;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double w = mu.weight(idx[k]);
    if (w <= 0.0)
      continue;
    const double qb = (k + 1 == idx.size()) ? 1.0 : std::min(qa + w, 1.0);
    const double zb = zq(qb);
    const double iz = phi(za) - phi(zb);
    const double iz2 = (qb - qa) - (zphi(zb) - zphi(za));
    const double c = mu.point(idx[k])[0] - mean;
    total += c * c * (qb - qa) - 2.0 * c * s * iz + var * iz2;
    qa = qb;
    za = zb;
  }
  return std::sqrt(std::max(total, 0.0));
}

double wasserstein2_to_gaussian(const GridDensity1D& rho, double mean, double var)
{
  // four sub-atoms per cell keep the piecewise-constant quantile error at O(dx^2 / 64)
  const auto& g = rho.grid();
  std::vector<double> x, w;
  x.reserve(4 * g.cells);
  w.reserve(4 * g.cells);
  for (std::size_t i = 0; i < g.cells; ++i) {
    if (rho.values()[i] == 0.0)
      continue;
    for (int k = 0; k < 4; ++k) {
      x.push_back(g.x_min + (static_cast<double>(i) + (k + 0.5) / 4.0) * g.dx);
      w.push_back(rho.values()[i] * g.dx / 4.0);
    }
  }
  return wasserstein2_to_gaussian(EmpiricalMeasure(std::move(x), std::move(w), 1), mean, var);
}

double wasserstein2_gaussians(double m1, double v1, double m2, double v2)
{
  const double ds = std::sqrt(v1) - std::sqrt(v2);
  return std::sqrt((m1 - m2) * (m1 - m2) + ds * ds);
}

} // namespace mkv
