#include "mkvlab/fpe.hpp"

#include "mkvlab/error.hpp"
#include "mkvlab/time_grid.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <string>

namespace mkv {

namespace {

std::mutex g_audit_mutex;
FpeAudit g_audit;

void record_audit(const ConservationLog& log)
{
  std::lock_guard lock(g_audit_mutex);
  ++g_audit.solves;
  g_audit.steps += log.steps;
  g_audit.max_mass_error = std::max(g_audit.max_mass_error, log.max_mass_error);
  g_audit.clipped_mass += log.clipped_mass;
  g_audit.min_value = std::min(g_audit.min_value, log.min_value);
}

void thomas(const std::vector<double>& lower, std::vector<double> diag, const std::vector<double>& upper,
            std::vector<double>& x)
{
  // lower[i] couples row i to i-1 (lower[0] unused), upper[i] couples i to i+1
  const std::size_t n = diag.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double w = lower[i] / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    x[i] -= w * x[i - 1];
  }
  x[n - 1] /= diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;)
    x[i] = (x[i] - upper[i] * x[i + 1]) / diag[i];
}

// Face weights for the transport flux: central where the cell Peclet number
// allows a monotone scheme, first-order upwind elsewhere.
struct Faces
{
  std::vector<double> wl, wr;
};

Faces face_weights(const std::vector<double>& a, const std::vector<double>& v, double dx)
{
  const std::size_t m = a.size();
  Faces f;
  f.wl.resize(m - 1);
  f.wr.resize(m - 1);
  for (std::size_t i = 0; i + 1 < m; ++i) {
    if (std::abs(v[i]) * dx <= a[i] && std::abs(v[i + 1]) * dx <= a[i + 1]) {
      f.wl[i] = 0.5;
      f.wr[i] = 0.5;
    } else {
      f.wl[i] = v[i] > 0.0 ? 1.0 : 0.0;
      f.wr[i] = v[i + 1] < 0.0 ? 1.0 : 0.0;
    }
  }
  return f;
}

void eval_cells(const DriftFn& b, const DiffusionFn& sig, std::size_t noise_dim, double t, const GridSpec& g,
                const MeasureView& view, std::vector<double>& a, std::vector<double>& v)
{
  const std::size_t m = g.cells;
  a.resize(m);
  v.resize(m);
  std::vector<double> s(noise_dim);
  for (std::size_t i = 0; i < m; ++i) {
    const double x = g.center(i);
    const std::span<const double> xs(&x, 1);
    sig(t, xs, view, s);
    double acc = 0.0;
    for (double e : s)
      acc += e * e;
    a[i] = acc;
    b(t, xs, view, std::span<double>(&v[i], 1));
  }
}

// Tridiagonal system for one implicit step with frozen (a, v):
// u_i + r (F_{i+1/2} - F_{i-1/2}) = rhs_i.
void implicit_linear(const std::vector<double>& a, const std::vector<double>& v, const Faces& f, double r, double dx,
                     std::vector<double>& u)
{
  const std::size_t m = u.size();
  std::vector<double> lower(m, 0.0), diag(m, 1.0), upper(m, 0.0);
  for (std::size_t i = 0; i + 1 < m; ++i) {
    const double p = a[i] / (2.0 * dx) + f.wl[i] * v[i];
    const double q = -a[i + 1] / (2.0 * dx) + f.wr[i] * v[i + 1];
    diag[i] += r * p;
    upper[i] = r * q;
    lower[i + 1] = -r * p;
    diag[i + 1] -= r * q;
  }
  thomas(lower, std::move(diag), upper, u);
}

class Stepper
{
public:
  Stepper(const GridSpec& g, const SolverConfig& cfg)
    : g_(g)
    , cfg_(cfg)
  {}

  ConservationLog log;

  // Post-step bookkeeping: mass error, clipping, edge mass.
  void finish(std::vector<double>& u, double mass_before)
  {
    ++log.steps;
    double mass = 0.0, neg = 0.0, lo = 0.0;
    for (double x : u) {
      mass += x;
      if (x < 0.0) {
        neg -= x;
        lo = std::min(lo, x);
      }
    }
    mass *= g_.dx;
    log.max_mass_error = std::max(log.max_mass_error, std::abs(mass - mass_before));
    log.min_value = std::min(log.min_value, lo);
    if (neg > 0.0) {
      log.clipped_mass += neg * g_.dx;
      if (log.clipped_mass > cfg_.clip_abort)
        throw Error("fpe: cumulative clipped mass " + std::to_string(log.clipped_mass) + " exceeds limit");
      double total = 0.0;
      for (double& x : u)
        total += (x = std::max(x, 0.0));
      total *= g_.dx;
      for (double& x : u)
        x /= total;
    }
    log.boundary_mass = std::max(log.boundary_mass, (u.front() + u.back()) * g_.dx);
  }

  void check_cfl(const std::vector<double>& a, const std::vector<double>& v, double dt) const
  {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      worst = std::max(worst, a[i] + std::abs(v[i]) * g_.dx);
    const double limit = cfg_.cfl_safety * g_.dx * g_.dx / std::max(worst, 1e-300);
    if (dt > limit)
      throw CflError("fpe: explicit step " + std::to_string(dt) + " exceeds CFL limit " + std::to_string(limit));
  }

  void explicit_update(std::vector<double>& u, const std::vector<double>& A, const std::vector<double>& V,
                       const Faces& f, double r) const
  {
    const std::size_t m = u.size();
    std::vector<double> flux(m - 1);
    for (std::size_t i = 0; i + 1 < m; ++i)
      flux[i] = -(A[i + 1] - A[i]) / (2.0 * g_.dx) + f.wl[i] * V[i] + f.wr[i] * V[i + 1];
    for (std::size_t i = 0; i < m; ++i) {
      const double right = i + 1 < m ? flux[i] : 0.0;
      const double left = i > 0 ? flux[i - 1] : 0.0;
      u[i] -= r * (right - left);
    }
  }

private:
  GridSpec g_;
  SolverConfig cfg_;
};

double mass_of(const std::vector<double>& u, double dx)
{
  double m = 0.0;
  for (double x : u)
    m += x;
  return m * dx;
}

void validate_cfg(const SolverConfig& cfg, double s, double t_end)
{
  if (!(cfg.dt > 0.0))
    throw Error("fpe: dt must be positive");
  if (!(cfg.cfl_safety > 0.0 && cfg.cfl_safety <= 1.0))
    throw Error("fpe: cfl_safety must lie in (0, 1]");
  if (!(t_end >= s))
    throw Error("fpe: t_end before start time");
}

bool is_output(double t, const SolverConfig& cfg, double t_end)
{
  if (cfg.output_times.empty() || same_time(t, t_end))
    return true;
  return std::any_of(cfg.output_times.begin(), cfg.output_times.end(), [t](double o) { return same_time(o, t); });
}

// One Newton-solved implicit step for beta-form coefficients.
void nemytskii_implicit(const NLDBMParams& p, const std::vector<double>& D, const Faces& f, double r, double dx,
                        const SolverConfig& cfg, std::vector<double>& u, ConservationLog& log)
{
  const std::size_t m = u.size();
  const std::vector<double> un = u;
  std::vector<double> A(m), dA(m), V(m), dV(m), G(m), lower(m), diag(m), upper(m), flux(m - 1);
  double res = INFINITY;
  int it = 0;
  for (;;) {
    for (std::size_t i = 0; i < m; ++i) {
      const double ui = u[i];
      A[i] = p.beta(ui);
      dA[i] = p.beta_prime(ui);
      const double bs = p.b_scalar(ui);
      V[i] = bs * ui * D[i];
      dV[i] = (p.b_scalar_prime(ui) * ui + bs) * D[i];
    }
    for (std::size_t i = 0; i + 1 < m; ++i)
      flux[i] = -(A[i + 1] - A[i]) / (2.0 * dx) + f.wl[i] * V[i] + f.wr[i] * V[i + 1];
    res = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double right = i + 1 < m ? flux[i] : 0.0;
      const double left = i > 0 ? flux[i - 1] : 0.0;
      G[i] = u[i] - un[i] + r * (right - left);
      res = std::max(res, std::abs(G[i]));
    }
    if (res <= cfg.newton_tol || it >= cfg.max_newton)
      break;
    std::fill(lower.begin(), lower.end(), 0.0);
    std::fill(upper.begin(), upper.end(), 0.0);
    std::fill(diag.begin(), diag.end(), 1.0);
    for (std::size_t i = 0; i + 1 < m; ++i) {
      const double pi = dA[i] / (2.0 * dx) + f.wl[i] * dV[i];
      const double qi = -dA[i + 1] / (2.0 * dx) + f.wr[i] * dV[i + 1];
      diag[i] += r * pi;
      upper[i] = r * qi;
      lower[i + 1] = -r * pi;
      diag[i + 1] -= r * qi;
    }
    for (std::size_t i = 0; i < m; ++i)
      G[i] = -G[i];
    thomas(lower, diag, upper, G);
    for (std::size_t i = 0; i < m; ++i)
      u[i] += G[i];
    ++it;
  }
  log.max_iterations = std::max(log.max_iterations, it);
  log.max_residual = std::max(log.max_residual, res);
  if (res > cfg.newton_tol)
    throw ConvergenceError("fpe: Newton iteration did not converge in " + std::to_string(it) + " steps", res);
}

GridDensity1D view_density(const GridSpec& g, const std::vector<double>& u)
{
  return GridDensity1D::normalized(g, u);
}

} // namespace

bool DensityPath::covers(double s, double t) const
{
  return !times.empty() && s >= times.front() - 1e-12 * std::max(1.0, std::abs(s)) &&
         t <= times.back() + 1e-12 * std::max(1.0, std::abs(t));
}

std::ptrdiff_t DensityPath::index_of(double t) const
{
  auto it = std::lower_bound(times.begin(), times.end(), t - 1e-12 * std::max(1.0, std::abs(t)));
  if (it != times.end() && same_time(*it, t))
    return it - times.begin();
  return -1;
}

GridDensity1D DensityPath::state_at(double t) const
{
  if (!covers(t, t))
    throw Error("DensityPath: time " + std::to_string(t) + " outside [" + std::to_string(start()) + ", " +
                std::to_string(end()) + "]");
  const auto k = index_of(t);
  if (k >= 0)
    return states[static_cast<std::size_t>(k)];
  const auto hi = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
  const std::size_t lo = hi - 1;
  const double w = (t - times[lo]) / (times[hi] - times[lo]);
  std::vector<double> v(grid.cells);
  for (std::size_t i = 0; i < grid.cells; ++i)
    v[i] = (1.0 - w) * states[lo].values()[i] + w * states[hi].values()[i];
  return GridDensity1D::normalized(grid, std::move(v));
}

DensityPath solve_nonlinear_fpe(const GridDensity1D& u0, const CoefficientSet& c, double s, double t_end,
                                const SolverConfig& cfg)
{
  validate_cfg(cfg, s, t_end);
  if (c.dim != 1)
    throw Error("solve_nonlinear_fpe: only d = 1");
  const GridSpec& g = u0.grid();
  const std::size_t m = g.cells;
  if (m < 3)
    throw Error("solve_nonlinear_fpe: need at least 3 cells");
  DensityPath path{g, {s}, {u0}, {}};
  if (same_time(s, t_end)) {
    record_audit(path.log);
    return path;
  }
  const auto pts = time_grid(s, t_end, cfg.dt, cfg.output_times);
  Stepper st(g, cfg);
  std::vector<double> u = u0.values(), a, v;
  const NLDBMParams* nem = c.nemytskii.get();
  std::vector<double> D;
  if (nem) {
    D.resize(m);
    for (std::size_t i = 0; i < m; ++i)
      D[i] = nem->D(g.center(i));
  }
  auto nem_coeffs = [&](const std::vector<double>& w) {
    a.resize(m);
    v.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      a[i] = nem->ratio(w[i]);
      v[i] = nem->b_scalar(w[i]) * D[i];
    }
  };

  for (std::size_t n = 1; n < pts.size(); ++n) {
    const double t0 = pts[n - 1], t1 = pts[n], dt = t1 - t0, r = dt / g.dx;
    const double mass_before = mass_of(u, g.dx);
    if (nem)
      nem_coeffs(u);
    else
      eval_cells(c.b, c.sigma, c.noise_dim, t0, g, MeasureView(view_density(g, u)), a, v);
    const Faces f = face_weights(a, v, g.dx);

    if (cfg.scheme == Scheme::explicit_euler) {
      std::vector<double> A(m), V(m);
      double worst = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        A[i] = nem ? nem->beta(u[i]) : a[i] * u[i];
        V[i] = v[i] * u[i];
        // the nonlinear diffusion is governed by beta'(u), not only beta(u)/u
        if (nem)
          worst = std::max(worst, nem->beta_prime(u[i]));
      }
      if (nem)
        for (double& e : a)
          e = std::max(e, worst);
      st.check_cfl(a, v, dt);
      st.explicit_update(u, A, V, f, r);
    } else if (nem) {
      nemytskii_implicit(*nem, D, f, r, g.dx, cfg, u, st.log);
    } else {
      const std::vector<double> un = u;
      double change = INFINITY;
      int it = 0;
      while (it < cfg.max_newton) {
        eval_cells(c.b, c.sigma, c.noise_dim, t1, g, MeasureView(view_density(g, u)), a, v);
        std::vector<double> next = un;
        implicit_linear(a, v, f, r, g.dx, next);
        change = 0.0;
        double scale = 1.0;
        for (std::size_t i = 0; i < m; ++i) {
          change = std::max(change, std::abs(next[i] - u[i]));
          scale = std::max(scale, std::abs(next[i]));
        }
        u = std::move(next);
        ++it;
        if (change <= cfg.newton_tol * scale)
          break;
      }
      st.log.max_iterations = std::max(st.log.max_iterations, it);
      st.log.max_residual = std::max(st.log.max_residual, change);
      if (change > cfg.newton_tol * std::max(1.0, *std::max_element(u.begin(), u.end())))
        throw ConvergenceError("fpe: Picard iteration did not converge", change);
    }
    st.finish(u, mass_before);
    if (is_output(t1, cfg, t_end)) {
      path.times.push_back(t1);
      path.states.push_back(view_density(g, u));
    }
  }
  path.times.back() = t_end;
  path.log = st.log;
  record_audit(path.log);
  return path;
}

DensityPath solve_frozen_fpe(const GridDensity1D& nu0, const DensityPath& flow, const CoefficientSet& c, double s,
                             double t_end, const SolverConfig& cfg)
{
  validate_cfg(cfg, s, t_end);
  if (c.dim != 1)
    throw Error("solve_frozen_fpe: only d = 1");
  if (!flow.covers(s, t_end))
    throw Error("solve_frozen_fpe: flow does not cover [" + std::to_string(s) + ", " + std::to_string(t_end) + "]");
  const GridSpec& g = nu0.grid();
  if (!g.same_as(flow.grid))
    throw Error("solve_frozen_fpe: grid of the initial law differs from the flow grid");
  const std::size_t m = g.cells;
  DensityPath path{g, {s}, {nu0}, {}};
  if (same_time(s, t_end)) {
    record_audit(path.log);
    return path;
  }
  std::vector<double> mandatory = cfg.output_times;
  for (double t : flow.times)
    if (t > s && t < t_end)
      mandatory.push_back(t);
  const auto pts = time_grid(s, t_end, cfg.dt, mandatory);
  Stepper st(g, cfg);
  std::vector<double> u = nu0.values(), a, v, a1, v1;
  auto view_at = [&](double t) { return MeasureView(flow.state_at(t)); };

  std::unique_ptr<MeasureView> next_view;
  for (std::size_t n = 1; n < pts.size(); ++n) {
    const double t0 = pts[n - 1], t1 = pts[n], dt = t1 - t0, r = dt / g.dx;
    const double mass_before = mass_of(u, g.dx);
    // coefficients at the start of the step fix the flux type
    if (next_view)
      eval_cells(c.b_bar, c.sigma_bar, c.noise_dim, t0, g, *next_view, a, v);
    else
      eval_cells(c.b_bar, c.sigma_bar, c.noise_dim, t0, g, view_at(t0), a, v);
    const Faces f = face_weights(a, v, g.dx);
    if (cfg.scheme == Scheme::explicit_euler) {
      std::vector<double> A(m), V(m);
      for (std::size_t i = 0; i < m; ++i) {
        A[i] = a[i] * u[i];
        V[i] = v[i] * u[i];
      }
      st.check_cfl(a, v, dt);
      st.explicit_update(u, A, V, f, r);
      next_view.reset();
    } else {
      next_view = std::make_unique<MeasureView>(view_at(t1));
      eval_cells(c.b_bar, c.sigma_bar, c.noise_dim, t1, g, *next_view, a1, v1);
      implicit_linear(a1, v1, f, r, g.dx, u);
      st.log.max_iterations = std::max(st.log.max_iterations, 1);
    }
    st.finish(u, mass_before);
    if (is_output(t1, cfg, t_end)) {
      path.times.push_back(t1);
      path.states.push_back(view_density(g, u));
    }
  }
  path.times.back() = t_end;
  path.log = st.log;
  record_audit(path.log);
  return path;
}

DensityPath solve_frozen_fpe(const GridDensity1D& nu0, const DensityPath& flow, const CoefficientSet& c,
                             const SolverConfig& cfg)
{
  return solve_frozen_fpe(nu0, flow, c, flow.start(), flow.end(), cfg);
}

std::vector<double> fpe_weak_residual(const DensityPath& path, const CoefficientSet& c, const TestFunction& h,
                                      const DensityPath* flow)
{
  const GridSpec& g = path.grid;
  const std::size_t m = g.cells;
  std::vector<double> h0(m), h1(m), h2(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double x = g.center(i);
    h0[i] = h(x);
    h1[i] = h.d1(x);
    h2[i] = h.d2(x);
  }
  auto pair = [&](const GridDensity1D& rho, const std::vector<double>& w) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      acc += rho.values()[i] * w[i];
    return acc * g.dx;
  };
  std::vector<double> a, v, gen(path.times.size());
  for (std::size_t k = 0; k < path.times.size(); ++k) {
    const double t = path.times[k];
    const auto& rho = path.states[k];
    if (flow)
      eval_cells(c.b_bar, c.sigma_bar, c.noise_dim, t, g, MeasureView(flow->state_at(t)), a, v);
    else
      eval_cells(c.b, c.sigma, c.noise_dim, t, g, MeasureView(rho), a, v);
    std::vector<double> lh(m);
    for (std::size_t i = 0; i < m; ++i)
      lh[i] = 0.5 * a[i] * h2[i] + v[i] * h1[i];
    gen[k] = pair(rho, lh);
  }
  std::vector<double> res(path.times.size(), 0.0);
  const double first = pair(path.states[0], h0);
  double integral = 0.0;
  for (std::size_t k = 1; k < path.times.size(); ++k) {
    integral += 0.5 * (gen[k - 1] + gen[k]) * (path.times[k] - path.times[k - 1]);
    res[k] = pair(path.states[k], h0) - first - integral;
  }
  return res;
}

FpeAudit fpe_audit()
{
  std::lock_guard lock(g_audit_mutex);
  return g_audit;
}

void reset_fpe_audit()
{
  std::lock_guard lock(g_audit_mutex);
  g_audit = {};
}

} // namespace mkv
