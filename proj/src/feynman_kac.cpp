#include "mkvlab/feynman_kac.hpp"

#include "mkvlab/error.hpp"
#include "mkvlab/io.hpp"
#include "mkvlab/time_grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>

namespace mkv {

namespace {

constexpr std::uint64_t kFlowSeedMix = 0x6a09e667f3bcc909ull;

std::uint64_t absolute_step(double t, double dt)
{
  return t > 0.0 ? static_cast<std::uint64_t>(std::llround(t / dt)) : 0;
}

GridSpec fpe_grid(const FKConfig& cfg, const EmpiricalMeasure& mu)
{
  if (cfg.grid.cells > 0)
    return cfg.grid;
  const auto [lo, hi] = std::minmax_element(mu.points().begin(), mu.points().end());
  return GridSpec::covering(*lo - 8.0, *hi + 8.0, 1e-2);
}

MeasureFlow build_flow(const CoefficientSet& c, const EmpiricalMeasure& mu, double t, double T, const FKConfig& cfg)
{
  if (cfg.flow_backend == FlowBackend::fpe) {
    if (c.dim != 1)
      throw Error("fk_evaluate: the fpe flow backend needs d = 1");
    SolverConfig sc = cfg.solver;
    sc.output_times.clear();
    sc.dt = cfg.sim.dt;
    const auto rho = deposit_to_grid(mu, fpe_grid(cfg, mu));
    return MeasureFlow::from_path(solve_nonlinear_fpe(rho, c, t, T, sc));
  }
  SimConfig sim = cfg.sim;
  sim.record_times.clear();
  sim.stream_ids.clear();
  sim.seed = cfg.sim.seed ^ kFlowSeedMix;
  sim.step_offset = absolute_step(t, cfg.sim.dt);
  sim.n_particles = mu.is_uniform() && mu.size() >= cfg.flow_particles ? mu.size() : cfg.flow_particles;
  auto e = std::make_shared<const PathEnsemble>(simulate_mckean_vlasov(mu, c, t, T, sim));
  GridSpec g{0.0, 0.0, 0};
  if (c.needs_density)
    g = sim.density_grid.cells > 0 ? sim.density_grid : fpe_grid(cfg, mu);
  return MeasureFlow::from_ensemble(std::move(e), g, sim.bandwidth);
}

std::string where(double t, std::span<const double> x)
{
  std::string s = "t=" + std::to_string(t) + ", x=(";
  for (std::size_t a = 0; a < x.size(); ++a)
    s += (a ? "," : "") + std::to_string(x[a]);
  return s + ")";
}

FKEstimate summarize(std::vector<double> y, bool keep)
{
  FKEstimate est;
  const double n = static_cast<double>(y.size());
  est.n_replicas = y.size();
  double mean = 0.0;
  for (double v : y)
    mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : y)
    var += (v - mean) * (v - mean);
  est.value = mean;
  est.stderr = y.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
  if (keep)
    est.samples = std::move(y);
  return est;
}

// Per-replica estimates along a precomputed flow.
std::vector<double> replica_values(const FKProblem& p, double t, std::span<const double> x, const MeasureFlow& flow,
                                   const FKConfig& cfg)
{
  const auto& c = p.coeffs;
  const std::size_t R = cfg.sim.n_particles;
  SimConfig sim = cfg.sim;
  sim.record_times.clear();
  sim.stream_ids.clear();
  sim.step_offset = absolute_step(t, sim.dt);
  const auto e = simulate_frozen(EmpiricalMeasure::dirac(x), flow, c, t, p.T, sim);
  const std::size_t K = e.times.size(), d = e.dim;
  std::vector<double> logw(R, 0.0), acc(R, 0.0), y(d);
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const double tk = e.times[k], dt = e.times[k + 1] - tk;
    if (!p.V && !p.f_source)
      break;
    const auto view = flow.view(tk);
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t a = 0; a < d; ++a)
        y[a] = e.at(r, k, a);
      if (p.f_source)
        acc[r] += p.f_source(tk, y, view) * std::exp(logw[r]) * dt;
      if (p.V) {
        const double v = p.V(tk, y, view);
        if (!(std::abs(v) <= p.V_bound))
          throw Error("fk_evaluate: |V| = " + std::to_string(std::abs(v)) + " exceeds the declared bound " +
                      std::to_string(p.V_bound) + " at " + where(tk, y));
        logw[r] += v * dt;
      }
    }
  }
  const auto end = flow.view(p.T);
  std::vector<double> out(R);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t a = 0; a < d; ++a)
      y[a] = e.at(r, K - 1, a);
    out[r] = p.Phi(y, end) * std::exp(logw[r]) + acc[r];
  }
  return out;
}

void check_problem(const FKProblem& p, double t, std::span<const double> x, const EmpiricalMeasure& mu)
{
  if (!p.Phi)
    throw Error("fk_evaluate: terminal function missing");
  if (t > p.T + 1e-12 * std::max(1.0, std::abs(p.T)))
    throw Error("fk_evaluate: t = " + std::to_string(t) + " after the terminal time " + std::to_string(p.T));
  if (x.size() != p.coeffs.dim || mu.dim() != p.coeffs.dim)
    throw Error("fk_evaluate: dimension mismatch");
}

std::string hash_of(const FKProblem& p, double t, std::span<const double> x, const EmpiricalMeasure& mu,
                    const FKConfig& cfg)
{
  std::string s = p.name + "|" + p.coeffs.family;
  char buf[64];
  auto add = [&](double v) {
    std::snprintf(buf, sizeof buf, "|%.17g", v);
    s += buf;
  };
  for (const auto& [k, v] : p.coeffs.params) {
    s += "|" + k;
    add(v);
  }
  add(t);
  add(p.T);
  for (double v : x)
    add(v);
  add(static_cast<double>(mu.size()));
  for (double v : moments(mu).mean)
    add(v);
  add(cfg.sim.dt);
  add(static_cast<double>(cfg.sim.n_particles));
  add(static_cast<double>(cfg.sim.seed));
  add(static_cast<double>(cfg.flow_backend == FlowBackend::fpe));
  return fnv1a_hex(s);
}

std::vector<double> values_at(const FKProblem& p, double t, double x, const EmpiricalMeasure& mu, const FKConfig& cfg)
{
  if (same_time(t, p.T))
    return std::vector<double>(cfg.sim.n_particles, p.Phi(std::span<const double>(&x, 1), MeasureView(mu)));
  const auto flow = build_flow(p.coeffs, mu, t, p.T, cfg);
  return replica_values(p, t, std::span<const double>(&x, 1), flow, cfg);
}

// Lagrange interpolation on the probe table: linear, or quadratic through the
// three nearest nodes.
double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x, bool quadratic)
{
  const std::size_t n = xs.size();
  auto it = std::upper_bound(xs.begin(), xs.end(), x);
  std::size_t hi = std::clamp<std::size_t>(static_cast<std::size_t>(it - xs.begin()), 1, n - 1);
  std::size_t lo = hi - 1;
  if (!quadratic || n < 3) {
    const double w = (x - xs[lo]) / (xs[hi] - xs[lo]);
    return (1.0 - w) * ys[lo] + w * ys[hi];
  }
  if (lo > 0 && (hi + 1 >= n || std::abs(x - xs[lo - 1]) < std::abs(xs[hi + 1] - x)))
    --lo;
  const std::size_t i0 = lo, i1 = lo + 1, i2 = lo + 2;
  const double x0 = xs[i0], x1 = xs[i1], x2 = xs[i2];
  return ys[i0] * (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2)) + ys[i1] * (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2)) +
         ys[i2] * (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1));
}

} // namespace

FKEstimate fk_evaluate(const FKProblem& p, double t, std::span<const double> x, const EmpiricalMeasure& mu,
                       const FKConfig& cfg)
{
  check_problem(p, t, x, mu);
  if (cfg.sim.n_particles == 0)
    throw Error("fk_evaluate: need at least one replica");
  std::vector<double> y;
  if (same_time(t, p.T))
    y.assign(cfg.sim.n_particles, p.Phi(x, MeasureView(mu)));
  else
    y = replica_values(p, t, x, build_flow(p.coeffs, mu, t, p.T, cfg), cfg);
  auto est = summarize(std::move(y), cfg.keep_samples);
  est.config_hash = hash_of(p, t, x, mu, cfg);
  return est;
}

FKEstimate fk_evaluate(const FKProblem& p, double t, double x, const EmpiricalMeasure& mu, const FKConfig& cfg)
{
  return fk_evaluate(p, t, std::span<const double>(&x, 1), mu, cfg);
}

double l_derivative_fd(const std::function<double(const EmpiricalMeasure&)>& g, const EmpiricalMeasure& mu,
                       const VectorField& phi, double eps)
{
  if (!(eps > 0.0))
    throw Error("l_derivative_fd: eps must be positive");
  return (g(pushforward(mu, phi, eps)) - g(pushforward(mu, phi, -eps))) / (2.0 * eps);
}

PdeResidualReport pde_residual(const FKProblem& p, double t, double x, const EmpiricalMeasure& mu,
                               const PdeResidualConfig& cfg)
{
  const auto& c = p.coeffs;
  if (c.dim != 1)
    throw Error("pde_residual: only d = 1");
  const double dt = cfg.fk.sim.dt;
  // time step on the simulation grid so shifted runs share increments
  const double h = std::max(1.0, std::round(cfg.steps.dt_fd / dt)) * dt;
  const double dx = cfg.steps.dx_fd, eps = cfg.steps.eps_measure;
  if (!(dx > 0.0) || !(eps > 0.0))
    throw Error("pde_residual: FD steps must be positive");
  if (!(t + h < p.T))
    throw Error("pde_residual: probe time plus the FD step must stay below T");
  check_problem(p, t, std::span<const double>(&x, 1), mu);

  const MeasureView view(mu);
  const std::size_t n = mu.size();
  // drift and diffusion fields of the main pair at the atoms
  std::vector<double> b_at(n), a_at(n);
  for (std::size_t i = 0; i < n; ++i) {
    b_at[i] = c.b1(t, mu.point(i)[0], view);
    a_at[i] = c.a1(t, mu.point(i)[0], view);
  }
  auto moved = [&](const std::vector<double>& shift) {
    std::vector<double> pts = mu.points();
    for (std::size_t i = 0; i < n; ++i)
      pts[i] += shift[i];
    return EmpiricalMeasure(std::move(pts), mu.weights(), 1);
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return mu.point(i)[0] < mu.point(j)[0]; });
  std::vector<double> sign(n);
  for (std::size_t k = 0; k < n; ++k)
    sign[order[k]] = k % 2 == 0 ? 1.0 : -1.0;
  auto spread = [&](double e, double s) {
    std::vector<double> sh(n);
    for (std::size_t i = 0; i < n; ++i)
      sh[i] = s * sign[i] * std::sqrt(e * a_at[i]);
    return moved(sh);
  };
  auto drift = [&](double e) {
    std::vector<double> sh(n);
    for (std::size_t i = 0; i < n; ++i)
      sh[i] = e * b_at[i];
    return moved(sh);
  };

  const auto& fk = cfg.fk;
  const auto y0 = values_at(p, t, x, mu, fk);
  const auto yt_p = values_at(p, t + h, x, mu, fk), yt_m = values_at(p, t - h, x, mu, fk);
  const auto yx_p = values_at(p, t, x + dx, mu, fk), yx_m = values_at(p, t, x - dx, mu, fk);
  const auto yb_p = values_at(p, t, x, drift(eps), fk), yb_m = values_at(p, t, x, drift(-eps), fk);
  const auto ys1_p = values_at(p, t, x, spread(eps, 1.0), fk), ys1_m = values_at(p, t, x, spread(eps, -1.0), fk);
  const auto ys2_p = values_at(p, t, x, spread(0.5 * eps, 1.0), fk);
  const auto ys2_m = values_at(p, t, x, spread(0.5 * eps, -1.0), fk);

  const std::span<const double> xs(&x, 1);
  const double abar = c.a1_bar(t, x, view), bbar = c.b1_bar(t, x, view);
  const double V = p.V ? p.V(t, xs, view) : 0.0;
  const double f = p.f_source ? p.f_source(t, xs, view) : 0.0;

  const std::size_t R = y0.size();
  std::vector<double> res(R);
  PdeResidualReport rep;
  for (std::size_t r = 0; r < R; ++r) {
    const double dtt = (yt_p[r] - yt_m[r]) / (2.0 * h);
    const double ux = (yx_p[r] - yx_m[r]) / (2.0 * dx);
    const double uxx = (yx_p[r] - 2.0 * y0[r] + yx_m[r]) / (dx * dx);
    const double sp = 0.5 * abar * uxx + bbar * ux;
    const double d1 = (ys1_p[r] + ys1_m[r] - 2.0 * y0[r]) / eps;
    const double d2 = (ys2_p[r] + ys2_m[r] - 2.0 * y0[r]) / (0.5 * eps);
    const double meas = (yb_p[r] - yb_m[r]) / (2.0 * eps) + 0.5 * (2.0 * d2 - d1);
    const double pot = V * y0[r];
    rep.u += y0[r];
    rep.dt_term += dtt;
    rep.spatial_term += sp;
    rep.measure_term += meas;
    rep.potential_term += pot;
    res[r] = dtt + sp + meas + pot + f;
  }
  const double nr = static_cast<double>(R);
  rep.u /= nr;
  rep.dt_term /= nr;
  rep.spatial_term /= nr;
  rep.measure_term /= nr;
  rep.potential_term /= nr;
  rep.source_term = f;
  const auto est = summarize(std::move(res), false);
  rep.residual = est.value;
  rep.stderr = est.stderr;
  rep.truncation = cfg.truncation_constant * (h + dx * dx + eps + dt);
  rep.budget = rep.truncation + 3.0 * rep.stderr;
  if (3.0 * rep.stderr > cfg.max_noise * (1.0 + std::abs(rep.u)))
    throw Error("pde_residual: Monte Carlo noise 3*stderr = " + std::to_string(3.0 * rep.stderr) +
                " swamps the finite-difference steps (dt_fd = " + std::to_string(h) + ", dx_fd = " +
                std::to_string(dx) + ", eps = " + std::to_string(eps) + ") at " + std::to_string(R) +
                " replicas; increase replicas or the FD steps");
  return rep;
}

TowerReport fk_tower_check(const FKProblem& p, double t, double r, double x, const EmpiricalMeasure& mu,
                           const std::vector<double>& probes, const FKConfig& cfg)
{
  if (!(t < r && r < p.T))
    throw Error("fk_tower_check: need t < r < T");
  if (probes.size() < 3 || !std::is_sorted(probes.begin(), probes.end()))
    throw Error("fk_tower_check: need at least three sorted probe points");
  TowerReport rep;
  const auto direct = fk_evaluate(p, t, x, mu, cfg);
  rep.direct = direct.value;
  rep.direct_err = direct.stderr;

  const auto flow = build_flow(p.coeffs, mu, t, r, cfg);
  const auto mid = flow.view(r).atoms();
  std::vector<double> table;
  double worst = 0.0;
  for (double y : probes) {
    const auto e = fk_evaluate(p, r, y, mid, cfg);
    table.push_back(e.value);
    worst = std::max(worst, e.stderr);
  }
  auto restarted = [&](bool quadratic) {
    FKProblem q = p;
    q.T = r;
    q.Phi = [probes, table, quadratic](std::span<const double> y, const MeasureView&) {
      return interpolate(probes, table, y[0], quadratic);
    };
    return fk_evaluate(q, t, x, mu, cfg);
  };
  const auto lin = restarted(false);
  const auto quad = restarted(true);
  rep.composed = lin.value;
  const double growth = std::isfinite(p.V_bound) ? std::exp(p.V_bound * (r - t)) : 1.0;
  rep.composed_err = lin.stderr + worst * growth;
  rep.interpolation = std::abs(lin.value - quad.value);
  return rep;
}

} // namespace mkv
