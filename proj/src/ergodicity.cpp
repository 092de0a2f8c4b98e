#include "mkvlab/ergodicity.hpp"

#include "mkvlab/error.hpp"
#include "mkvlab/rng.hpp"
#include "mkvlab/wasserstein.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mkv {

namespace {

constexpr std::uint64_t kBootstrapStream = std::uint64_t{1} << 50;

void require_contraction(const MonotonicityConstants& k, const char* who)
{
  if (!(k.lambda > k.kappa))
    throw Error(std::string(who) + ": requires the monotonicity hypothesis lambda > kappa, got lambda = " +
                std::to_string(k.lambda) + ", kappa = " + std::to_string(k.kappa));
}

std::uint64_t window_seed(std::uint64_t seed, std::uint64_t w)
{
  // splitmix64 finalizer keeps window seeds unrelated to each other
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (w + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::vector<double> gaussian_quantile_atoms(const GaussianLaw& g, std::size_t n)
{
  const boost::math::normal_distribution<double> law(g.mean, std::sqrt(g.var));
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = boost::math::quantile(law, (static_cast<double>(i) + 0.5) / static_cast<double>(n));
  return x;
}

// Integrals of z and z^2 over the n equal quantile slots of N(0, 1), shared by
// every uniform cloud of size n.
class QuantileSlots
{
public:
  explicit QuantileSlots(std::size_t n)
    : iz_(n)
    , iz2_(n)
  {
    const boost::math::normal_distribution<double> std_normal;
    auto phi = [](double z) { return std::isfinite(z) ? std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi) : 0.0; };
    auto zphi = [&](double z) { return std::isfinite(z) ? z * phi(z) : 0.0; };
    double za = -INFINITY, qa = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double qb = k + 1 == n ? 1.0 : static_cast<double>(k + 1) / static_cast<double>(n);
      const double zb = k + 1 == n ? INFINITY : boost::math::quantile(std_normal, qb);
      iz_[k] = phi(za) - phi(zb);
      iz2_[k] = (qb - qa) - (zphi(zb) - zphi(za));
      za = zb;
      qa = qb;
    }
  }

  //! W2^2 between the uniform cloud with sorted values x and N(mean, var).
  double w2_sq(const std::vector<double>& sorted, const GaussianLaw& g) const
  {
    const double s = std::sqrt(g.var), n = static_cast<double>(sorted.size());
    double total = 0.0;
    for (std::size_t k = 0; k < sorted.size(); ++k) {
      const double c = sorted[k] - g.mean;
      total += c * c / n - 2.0 * c * s * iz_[k] + g.var * iz2_[k];
    }
    return std::max(total, 0.0);
  }

private:
  std::vector<double> iz_, iz2_;
};

double w2_sq_sorted(const std::vector<double>& sorted, const EmpiricalMeasure& target,
                    const std::optional<GaussianLaw>& gaussian, const QuantileSlots* slots)
{
  if (gaussian && slots)
    return slots->w2_sq(sorted, *gaussian);
  const double w = distance_to(EmpiricalMeasure::uniform(sorted), target, gaussian);
  return w * w;
}

struct Measured
{
  double w2 = 0.0;
  double err_sq = 0.0;
};

Measured measure(const EmpiricalMeasure& cloud, const EmpiricalMeasure& target, const std::optional<GaussianLaw>& g,
                 const QuantileSlots* slots, std::size_t boot, std::uint64_t seed, std::uint64_t stream)
{
  std::vector<double> x = cloud.points();
  std::sort(x.begin(), x.end());
  Measured m;
  m.w2 = std::sqrt(w2_sq_sorted(x, target, g, slots));
  if (boot < 2)
    return m;
  const std::size_t n = x.size();
  const NormalStream rng(seed, kBootstrapStream + stream);
  std::vector<double> y(n), vals(boot);
  for (std::size_t b = 0; b < boot; ++b) {
    for (std::size_t i = 0; i < n; i += 4) {
      const auto u = rng.uniforms(b * ((n + 3) / 4) + i / 4);
      for (std::size_t r = 0; r < 4 && i + r < n; ++r)
        y[i + r] = x[std::min(n - 1, static_cast<std::size_t>(u[r] * static_cast<double>(n)))];
    }
    std::sort(y.begin(), y.end());
    vals[b] = w2_sq_sorted(y, target, g, slots);
  }
  double mean = 0.0;
  for (double v : vals)
    mean += v;
  mean /= static_cast<double>(boot);
  double var = 0.0;
  for (double v : vals)
    var += (v - mean) * (v - mean);
  m.err_sq = std::sqrt(var / static_cast<double>(boot - 1));
  return m;
}

} // namespace

double distance_to(const EmpiricalMeasure& cloud, const EmpiricalMeasure& target,
                   const std::optional<GaussianLaw>& gaussian)
{
  if (gaussian)
    return wasserstein2_to_gaussian(cloud, gaussian->mean, gaussian->var);
  return wasserstein2(cloud, target);
}

double decay_envelope(const MonotonicityConstants& k, double w2_zeta_sq, double w2_theta_sq, double t)
{
  const double delta = k.kappa + k.lambda_bar - k.lambda;
  // (e^{-(lambda-kappa)t} - e^{-lambda_bar t}) / delta, equal to t e^{-lambda_bar t} at delta = 0
  const double cross = delta == 0.0 ? t * std::exp(-k.lambda_bar * t)
                                    : std::exp(-k.lambda_bar * t) * std::expm1(delta * t) / delta;
  return w2_zeta_sq * (std::exp(-(k.lambda - k.kappa) * t) + k.kappa_bar * cross) +
         w2_theta_sq * std::exp(-k.lambda_bar * t);
}

InvariantPair find_invariant(const CoefficientSet& c, const MonotonicityConstants& k, InvariantMethod method,
                             const InvariantConfig& cfg, const EmpiricalMeasure& start)
{
  require_contraction(k, "find_invariant");
  if (!c.time_homogeneous)
    throw Error("find_invariant: coefficients must be time-homogeneous");
  if (c.dim != 1)
    throw Error("find_invariant: only d = 1");
  const std::size_t n = cfg.sim.n_particles;
  InvariantPair inv;
  if (method == InvariantMethod::moment_fixed_point) {
    if (c.family != "meanfield-ou")
      throw Error("find_invariant: moment_fixed_point needs the meanfield-ou family, got " + c.family);
    const double l0 = c.params.at("lambda0"), s0 = c.params.at("sigma0");
    if (!(s0 > 0.0))
      throw Error("find_invariant: moment_fixed_point needs sigma0 > 0");
    // stationary moment equations: m = 0, V = sigma0^2 / (2 lambda0)
    const GaussianLaw g{0.0, s0 * s0 / (2.0 * l0)};
    inv.mu_gaussian = g;
    inv.nu_gaussian = g;
    inv.mu_inf = EmpiricalMeasure::uniform(gaussian_quantile_atoms(g, n));
    inv.nu_inf = inv.mu_inf;
    return inv;
  }
  if (!(cfg.window > 0.0))
    throw Error("find_invariant: window must be positive");
  const double tol = cfg.tol > 0.0 ? cfg.tol : std::max(1e-4, 2.0 / std::sqrt(static_cast<double>(n)));
  auto mu = EmpiricalMeasure::uniform(initial_positions(start, n, cfg.sim.seed));
  auto nu = mu;
  double t = 0.0;
  double inc = INFINITY;
  int calm = 0;
  for (std::uint64_t w = 0;; ++w) {
    if (t >= cfg.max_horizon)
      throw ConvergenceError("find_invariant: no convergence by t = " + std::to_string(t), inc);
    SimConfig sim = cfg.sim;
    sim.seed = window_seed(cfg.sim.seed, w);
    sim.record_times = {t + cfg.window};
    auto run = simulate_coupled(mu, nu, c, t, t + cfg.window, sim);
    t += cfg.window;
    auto mu_next = marginal(run.mu, t), nu_next = marginal(run.nu, t);
    inc = std::max(wasserstein2(mu_next, mu), wasserstein2(nu_next, nu));
    mu = std::move(mu_next);
    nu = std::move(nu_next);
    calm = w > 0 && inc < tol ? calm + 1 : 0;
    if (calm >= std::max(1, cfg.patience))
      break;
  }
  inv.mu_inf = std::move(mu);
  inv.nu_inf = std::move(nu);
  inv.horizon_used = t;
  inv.last_increment = inc;
  return inv;
}

ErgodicityReport decay_study(const EmpiricalMeasure& zeta0, const EmpiricalMeasure& theta0, const CoefficientSet& c,
                             const MonotonicityConstants& k, const InvariantPair& inv, double horizon,
                             std::size_t n_checkpoints, const DecayConfig& cfg)
{
  require_contraction(k, "decay_study");
  if (c.dim != 1)
    throw Error("decay_study: only d = 1");
  if (n_checkpoints < 2 || !(horizon > 0.0))
    throw Error("decay_study: need a positive horizon and at least two checkpoints");
  ErgodicityReport rep;
  rep.constants = k;
  for (std::size_t j = 0; j < n_checkpoints; ++j)
    rep.times.push_back(horizon * static_cast<double>(j) / static_cast<double>(n_checkpoints - 1));
  SimConfig sim = cfg.sim;
  sim.record_times = rep.times;
  const auto run = simulate_coupled(zeta0, theta0, c, 0.0, horizon, sim);
  const std::size_t n = run.mu.replicas;
  const QuantileSlots slots(n);

  rep.w2_zeta = distance_to(zeta0, inv.mu_inf, inv.mu_gaussian);
  rep.w2_theta = distance_to(theta0, inv.nu_inf, inv.nu_gaussian);
  rep.noise_floor = 2.0 / std::sqrt(static_cast<double>(n));
  std::vector<double> inv_probe;
  for (const auto& h : cfg.probes)
    inv_probe.push_back(inv.mu_inf.integrate(h.value));
  rep.probe_gaps.assign(cfg.probes.size(), {});

  for (std::size_t j = 0; j < rep.times.size(); ++j) {
    const double t = rep.times[j];
    const auto mu = marginal(run.mu, t), nu = marginal(run.nu, t);
    const auto a = measure(mu, inv.mu_inf, inv.mu_gaussian, &slots, cfg.bootstrap, sim.seed, 2 * j);
    const auto b = measure(nu, inv.nu_inf, inv.nu_gaussian, &slots, cfg.bootstrap, sim.seed, 2 * j + 1);
    rep.w2_mu.push_back(a.w2);
    rep.w2_nu.push_back(b.w2);
    rep.err_mu_sq.push_back(a.err_sq);
    rep.err_nu_sq.push_back(b.err_sq);
    const double env = decay_envelope(k, rep.w2_zeta * rep.w2_zeta, rep.w2_theta * rep.w2_theta, t);
    rep.bound.push_back(env);
    if (a.w2 * a.w2 > env + 3.0 * a.err_sq)
      ++rep.violations_mu;
    if (a.w2 * a.w2 + b.w2 * b.w2 > env + 3.0 * (a.err_sq + b.err_sq))
      ++rep.violations_total;
    for (std::size_t p = 0; p < cfg.probes.size(); ++p)
      rep.probe_gaps[p].push_back(std::abs(mu.integrate(cfg.probes[p].value) - inv_probe[p]));
  }

  // least squares of log W2^2 on the tail half, above the noise floor
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t j = 0; j < rep.times.size(); ++j) {
    if (rep.times[j] < 0.5 * horizon || rep.w2_mu[j] < rep.noise_floor)
      continue;
    const double x = rep.times[j], y = 2.0 * std::log(rep.w2_mu[j]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++rep.fit_points;
  }
  const double m = static_cast<double>(rep.fit_points);
  rep.fitted_rate = rep.fit_points >= 2 ? -(m * sxy - sx * sy) / (m * sxx - sx * sx) : std::nan("");
  return rep;
}

} // namespace mkv
