#include "mkvlab/lift.hpp"

#include "mkvlab/error.hpp"
#include "mkvlab/time_grid.hpp"

#include <algorithm>
#include <cmath>

namespace mkv {

namespace {

double spatial_integral(const std::variant<GridDensity1D, EmpiricalMeasure>& nu, const TestFunction& h)
{
  if (const auto* rho = std::get_if<GridDensity1D>(&nu))
    return rho->integrate([&h](double x) { return h(x); });
  return std::get<EmpiricalMeasure>(nu).integrate(h.value);
}

// 1/2 a : grad^2 h + b . grad h at x for the pair (b, sigma).
double kolmogorov(const TestFunction& h, std::span<const double> x, const MeasureView& mu, const DriftFn& b,
                  const DiffusionFn& sigma, std::size_t m, double t)
{
  const std::size_t d = x.size();
  std::vector<double> drift(d), sig(d * m), grad(d), hess(d * d);
  b(t, x, mu, drift);
  sigma(t, x, mu, sig);
  h.gradient(x, grad);
  h.hessian(x, hess);
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    acc += drift[i] * grad[i];
    for (std::size_t j = 0; j < d; ++j) {
      double a = 0.0;
      for (std::size_t k = 0; k < m; ++k)
        a += sig[i * m + k] * sig[j * m + k];
      acc += 0.5 * a * hess[i * d + j];
    }
  }
  return acc;
}

SolverConfig every_step(SolverConfig cfg)
{
  cfg.output_times.clear();
  return cfg;
}

SolverConfig end_only(SolverConfig cfg, double t)
{
  cfg.output_times = {t};
  return cfg;
}

struct Node
{
  double y;
  double w;
};

// Equal-mass strata of a piecewise-constant density, each represented by its
// barycentre.
std::vector<Node> strata(const GridDensity1D& rho, std::size_t k)
{
  const auto& g = rho.grid();
  const auto& v = rho.values();
  std::vector<Node> nodes;
  const double total = rho.mass();
  const double share = total / static_cast<double>(k);
  double filled = 0.0, moment = 0.0;
  for (std::size_t i = 0; i < g.cells; ++i) {
    const double lo = g.x_min + static_cast<double>(i) * g.dx;
    double left = lo;
    double rest = v[i] * g.dx;
    while (rest > 0.0) {
      const double cap = nodes.size() + 1 < k ? share - filled : rest;
      const double take = std::min(rest, cap);
      const double width = v[i] > 0.0 ? take / v[i] : 0.0;
      moment += take * (left + 0.5 * width);
      filled += take;
      rest -= take;
      left += width;
      if (filled >= share * (1.0 - 1e-12) && nodes.size() + 1 < k) {
        nodes.push_back({moment / filled, filled});
        filled = 0.0;
        moment = 0.0;
      }
    }
  }
  if (filled > 0.0)
    nodes.push_back({moment / filled, filled});
  return nodes;
}

} // namespace

double ProductLaw::integrate(const LiftedTestFunction& G) const
{
  return G.F(measure_atom) * spatial_integral(spatial, G.h0);
}

GridDensity1D mollified_dirac(const GridSpec& grid, double x, DiracMollifier kind, double* width)
{
  const auto cell = grid.cell_of(x);
  if (cell < 0)
    throw Error("mollified_dirac: point " + std::to_string(x) + " outside the grid");
  std::vector<double> v(grid.cells, 0.0);
  const auto i = static_cast<std::size_t>(cell);
  double w = grid.dx;
  if (kind == DiracMollifier::one_cell) {
    v[i] = 1.0 / grid.dx;
  } else {
    // linear split between neighbouring centres keeps mass and mean
    const double pos = (x - grid.x_min) / grid.dx - 0.5;
    auto left = static_cast<std::ptrdiff_t>(std::floor(pos));
    left = std::clamp<std::ptrdiff_t>(left, 0, static_cast<std::ptrdiff_t>(grid.cells) - 2);
    const double frac = std::clamp(pos - static_cast<double>(left), 0.0, 1.0);
    v[static_cast<std::size_t>(left)] = (1.0 - frac) / grid.dx;
    v[static_cast<std::size_t>(left) + 1] = frac / grid.dx;
    w = frac > 0.0 && frac < 1.0 ? 2.0 * grid.dx : grid.dx;
  }
  if (width)
    *width = w;
  return GridDensity1D(grid, std::move(v));
}

double apply_measure_generator(const CylindricalFunction& F, const MeasureView& mu, const CoefficientSet& c, double t)
{
  const auto& atoms = mu.atoms();
  if (F.dim() != atoms.dim())
    throw Error("apply_measure_generator: dimension mismatch");
  const auto r = F.integrals(atoms);
  std::vector<double> df(r.size());
  F.outer().gradient(r, df);
  double acc = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (df[i] == 0.0)
      continue;
    const auto& h = F.inner()[i];
    double part = 0.0;
    for (std::size_t k = 0; k < atoms.size(); ++k)
      part += atoms.weight(k) * kolmogorov(h, atoms.point(k), mu, c.b, c.sigma, c.noise_dim, t);
    acc += df[i] * part;
  }
  return acc;
}

double apply_measure_generator(const CylindricalFunction& F, const GridDensity1D& mu, const CoefficientSet& c, double t)
{
  return apply_measure_generator(F, MeasureView(mu), c, t);
}

double frozen_generator(const TestFunction& h, std::span<const double> x, const MeasureView& mu,
                        const CoefficientSet& c, double t)
{
  return kolmogorov(h, x, mu, c.b_bar, c.sigma_bar, c.noise_dim, t);
}

double apply_lifted_generator(const LiftedTestFunction& G, std::span<const double> x, const MeasureView& mu,
                              const CoefficientSet& c, double t)
{
  return G.F(mu.atoms()) * frozen_generator(G.h0, x, mu, c, t) + G.h0(x) * apply_measure_generator(G.F, mu, c, t);
}

double apply_lifted_generator(const LiftedTestFunction& G, double x, const GridDensity1D& mu, const CoefficientSet& c,
                              double t)
{
  return apply_lifted_generator(G, std::span<const double>(&x, 1), MeasureView(mu), c, t);
}

MarkovKernelState kernel_evaluate(double x, const DensityPath& flow, double s, double t, const CoefficientSet& c,
                                  KernelBackend backend, const KernelConfig& cfg)
{
  if (!flow.covers(s, t))
    throw Error("kernel_evaluate: flow does not cover [" + std::to_string(s) + ", " + std::to_string(t) + "]");
  MarkovKernelState st{s, t, x, flow.state_at(s), {flow.state_at(t), flow.state_at(t)}, 0.0, backend};
  const auto nu0 = mollified_dirac(flow.grid, x, cfg.mollifier, &st.mollifier_width);
  if (backend == KernelBackend::fpe) {
    if (same_time(s, t))
      st.value.spatial = nu0;
    else
      st.value.spatial = solve_frozen_fpe(nu0, flow, c, s, t, end_only(cfg.solver, t)).states.back();
  } else {
    st.mollifier_width = 0.0;
    if (same_time(s, t)) {
      st.value.spatial = EmpiricalMeasure::dirac(x);
    } else {
      SimConfig sim = cfg.sim;
      sim.record_times = {t};
      st.value.spatial = marginal(simulate_frozen(EmpiricalMeasure::dirac(x), flow, c, s, t, sim), t);
    }
  }
  return st;
}

MarkovKernelState kernel_evaluate(double x, const GridDensity1D& zeta, double s, double t, const CoefficientSet& c,
                                  KernelBackend backend, const KernelConfig& cfg)
{
  const auto flow = solve_nonlinear_fpe(zeta, c, s, t, every_step(cfg.solver));
  return kernel_evaluate(x, flow, s, t, c, backend, cfg);
}

CkReport chapman_kolmogorov_residual(double x, const GridDensity1D& zeta, double s, double r, double t,
                                     const CoefficientSet& c, const LiftedTestFunction& G, std::size_t quad_points,
                                     const KernelConfig& cfg)
{
  if (!(s < r && r < t))
    throw Error("chapman_kolmogorov_residual: need s < r < t");
  if (quad_points == 0)
    throw Error("chapman_kolmogorov_residual: quad_points must be positive");
  const auto g = zeta.grid();
  const auto flow = solve_nonlinear_fpe(zeta, c, s, t, every_step(cfg.solver));
  CkReport rep;
  const auto direct = kernel_evaluate(x, flow, s, t, c, KernelBackend::fpe, cfg);
  rep.direct = direct.value.integrate(G);
  rep.mollifier_width = direct.mollifier_width;

  const auto first = kernel_evaluate(x, flow, s, r, c, KernelBackend::fpe, cfg);
  const auto& nu_sr = std::get<GridDensity1D>(first.value.spatial);
  const auto restarted = solve_nonlinear_fpe(first.value.measure_atom, c, r, t, every_step(cfg.solver));
  const double F_t = G.F(restarted.states.back());

  std::vector<Node> nodes;
  std::size_t occupied = 0;
  for (double v : nu_sr.values())
    occupied += v > 0.0 ? 1 : 0;
  if (quad_points >= occupied) {
    rep.exact_quadrature = true;
    for (std::size_t i = 0; i < g.cells; ++i)
      if (nu_sr.values()[i] > 0.0)
        nodes.push_back({g.center(i), nu_sr.values()[i] * g.dx});
  } else {
    nodes = strata(nu_sr, quad_points);
  }
  rep.nodes = nodes.size();
  const auto cfg_end = end_only(cfg.solver, t);
  double acc = 0.0;
  for (const auto& nd : nodes) {
    const auto seed = mollified_dirac(g, nd.y, DiracMollifier::hat);
    const auto nu = solve_frozen_fpe(seed, restarted, c, r, t, cfg_end).states.back();
    acc += nd.w * nu.integrate([&](double y) { return G.h0(y); });
  }
  rep.composed = F_t * acc;
  rep.residual = std::abs(rep.direct - rep.composed);
  return rep;
}

namespace {

// Variance contributed by the finite mu cloud to the residual, by the delta
// method: each particle's influence on the F increment minus its influence on
// L F, scaled by the replica mean of h0.
double measure_noise(const LiftedTestFunction& f, const PathEnsemble& cloud, const CoefficientSet& c,
                     const MeasureView& mu, double t, double h, double h0_mean)
{
  const std::size_t N = cloud.replicas, d = cloud.dim;
  if (N < 2 || h0_mean == 0.0)
    return 0.0;
  const auto r = f.F.integrals(mu.atoms());
  std::vector<double> df(r.size());
  f.F.outer().gradient(r, df);
  const auto k0 = cloud.time_index(t - h), k1 = cloud.time_index(t), k2 = cloud.time_index(t + h);
  std::vector<double> lo(d), mid(d), hi(d);
  double s = 0.0, sq = 0.0;
  for (std::size_t q = 0; q < N; ++q) {
    for (std::size_t a = 0; a < d; ++a) {
      lo[a] = cloud.at(q, k0, a);
      mid[a] = cloud.at(q, k1, a);
      hi[a] = cloud.at(q, k2, a);
    }
    double psi = 0.0;
    for (std::size_t j = 0; j < df.size(); ++j) {
      if (df[j] == 0.0)
        continue;
      const auto& hj = f.F.inner()[j];
      psi += df[j] * ((hj(hi) - hj(lo)) / (2.0 * h) - kolmogorov(hj, mid, mu, c.b, c.sigma, c.noise_dim, t));
    }
    s += psi;
    sq += psi * psi;
  }
  const double n = static_cast<double>(N), m = s / n;
  return h0_mean * h0_mean * std::max(0.0, (sq - n * m * m) / (n - 1.0)) / n;
}

double mean_h0(const TestFunction& h0, const PathEnsemble& e, std::size_t k)
{
  std::vector<double> y(e.dim);
  double s = 0.0;
  for (std::size_t i = 0; i < e.replicas; ++i) {
    for (std::size_t a = 0; a < e.dim; ++a)
      y[a] = e.at(i, k, a);
    s += h0(y);
  }
  return s / static_cast<double>(e.replicas);
}

} // namespace

std::vector<ItoPoint> lifted_ito_consistency(const LiftedTestFunction& f, std::span<const double> x0,
                                             const EmpiricalMeasure& mu0, const CoefficientSet& c, double horizon,
                                             const ItoConfig& cfg)
{
  if (c.needs_density)
    throw Error("lifted_ito_consistency: density-dependent coefficients are not supported");
  const double h = cfg.fd_step;
  if (!(h > 0.0) || !(horizon > 2.0 * h))
    throw Error("lifted_ito_consistency: need 0 < fd_step < horizon / 2");
  auto checkpoints = cfg.checkpoints;
  if (checkpoints.empty())
    for (int k = 1; k <= 5; ++k)
      checkpoints.push_back(h + (horizon - 2.0 * h) * k / 6.0);
  for (double t : checkpoints)
    if (t - h < 0.0 || t + h > horizon)
      throw Error("lifted_ito_consistency: checkpoint " + std::to_string(t) + " too close to the horizon ends");

  SimConfig sim = cfg.sim;
  sim.record_times.clear();
  for (double t : checkpoints)
    for (double u : {t - h, t, t + h})
      sim.record_times.push_back(u);
  std::sort(sim.record_times.begin(), sim.record_times.end());
  const auto run = simulate_coupled(mu0, EmpiricalMeasure::dirac(x0), c, 0.0, horizon, sim);
  const std::size_t R = run.nu.replicas, d = run.nu.dim;

  auto values = [&](double t, std::vector<double>& out) {
    const auto k = run.nu.time_index(t);
    const double Fm = f.F(marginal(run.mu, t));
    out.resize(R);
    std::vector<double> y(d);
    for (std::size_t i = 0; i < R; ++i) {
      for (std::size_t a = 0; a < d; ++a)
        y[a] = run.nu.at(i, k, a);
      out[i] = f.h0(y) * Fm;
    }
  };

  std::vector<ItoPoint> res;
  std::vector<double> up, down, y(d);
  for (double t : checkpoints) {
    values(t + h, up);
    values(t - h, down);
    const MeasureView mu(marginal(run.mu, t));
    const double Fm = f.F(mu.atoms());
    const double LF = apply_measure_generator(f.F, mu, c, t);
    const auto k = run.nu.time_index(t);
    double sd = 0.0, sq = 0.0, sl = 0.0;
    for (std::size_t i = 0; i < R; ++i) {
      for (std::size_t a = 0; a < d; ++a)
        y[a] = run.nu.at(i, k, a);
      const double lhs = (up[i] - down[i]) / (2.0 * h);
      const double rhs = Fm * frozen_generator(f.h0, y, mu, c, t) + f.h0(y) * LF;
      sd += lhs - rhs;
      sq += (lhs - rhs) * (lhs - rhs);
      sl += lhs;
    }
    const double n = static_cast<double>(R);
    ItoPoint p;
    p.t = t;
    p.lhs = sl / n;
    p.rhs = (sl - sd) / n;
    const double mean = sd / n;
    const double var_nu = R > 1 ? std::max(0.0, (sq - n * mean * mean) / (n - 1.0)) / n : 0.0;
    p.stderr = std::sqrt(var_nu + measure_noise(f, run.mu, c, mu, t, h, mean_h0(f.h0, run.nu, k)));
    res.push_back(p);
  }
  return res;
}

std::vector<GeneratorPoint> measure_generator_consistency(const CylindricalFunction& F, const DensityPath& path,
                                                          const CoefficientSet& c, std::size_t stride)
{
  if (stride == 0)
    throw Error("measure_generator_consistency: stride must be positive");
  std::vector<GeneratorPoint> out;
  for (std::size_t k = stride; k + stride < path.times.size(); k += stride) {
    GeneratorPoint p;
    p.t = path.times[k];
    p.lhs = (F(path.states[k + stride]) - F(path.states[k - stride])) /
            (path.times[k + stride] - path.times[k - stride]);
    p.rhs = apply_measure_generator(F, path.states[k], c, p.t);
    out.push_back(p);
  }
  return out;
}

std::vector<double> product_weak_residual(const DensityPath& nu_path, const DensityPath& mu_path,
                                          const CoefficientSet& c, const LiftedTestFunction& G)
{
  if (nu_path.times.size() != mu_path.times.size())
    throw Error("product_weak_residual: paths have different time grids");
  const auto& g = nu_path.grid;
  const std::size_t T = nu_path.times.size();
  std::vector<double> lam(T), gen(T);
  for (std::size_t k = 0; k < T; ++k) {
    if (!same_time(nu_path.times[k], mu_path.times[k]))
      throw Error("product_weak_residual: paths have different time grids");
    const double t = nu_path.times[k];
    const auto& nu = nu_path.states[k];
    const MeasureView mu(mu_path.states[k]);
    const double Fm = G.F(mu_path.states[k]);
    const double LF = apply_measure_generator(G.F, mu, c, t);
    double acc = 0.0, val = 0.0;
    for (std::size_t i = 0; i < g.cells; ++i) {
      const double w = nu.values()[i] * g.dx;
      if (w == 0.0)
        continue;
      const double x = g.center(i);
      const std::span<const double> xs(&x, 1);
      acc += w * (Fm * frozen_generator(G.h0, xs, mu, c, t) + G.h0(x) * LF);
      val += w * G.h0(x);
    }
    lam[k] = Fm * val;
    gen[k] = acc;
  }
  std::vector<double> res(T, 0.0);
  double integral = 0.0;
  for (std::size_t k = 1; k < T; ++k) {
    integral += 0.5 * (gen[k - 1] + gen[k]) * (nu_path.times[k] - nu_path.times[k - 1]);
    res[k] = lam[k] - lam[0] - integral;
  }
  return res;
}

} // namespace mkv
