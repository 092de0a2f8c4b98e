#include "mkvlab/particles.hpp"

#include "mkvlab/error.hpp"
#include "mkvlab/rng.hpp"
#include "mkvlab/time_grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>

namespace mkv {

namespace {

constexpr char kMagic[8] = {'M', 'K', 'V', 'E', 'N', 'S', '0', '1'};
constexpr std::uint32_t kVersion = 1;
// companion particles of a coupled run draw from a disjoint block of streams
constexpr std::uint64_t kCompanionStreamBase = std::uint64_t{1} << 40;
// stream used for resampling initial laws
constexpr std::uint64_t kInitStream = std::uint64_t{1} << 48;

std::string where(std::size_t i, double t)
{
  return "particle " + std::to_string(i) + " at t=" + std::to_string(t);
}

// Particles kept in canonical order (ascending stream id) so that every
// reduction over the cloud is independent of the caller's ordering.
struct Population
{
  std::size_t n = 0, d = 1;
  std::vector<double> x;
  std::vector<std::uint64_t> stream;
  std::vector<std::size_t> slot; // canonical index -> caller's replica index

  Population(const std::vector<double>& pos, std::size_t dim, const std::vector<std::uint64_t>& ids,
             std::uint64_t stream_offset)
    : n(pos.size() / dim)
    , d(dim)
  {
    std::vector<std::uint64_t> sid(n);
    if (ids.empty()) {
      std::iota(sid.begin(), sid.end(), std::uint64_t{0});
    } else {
      if (ids.size() != n)
        throw Error("simulate: stream_ids has " + std::to_string(ids.size()) + " entries for " + std::to_string(n) +
                    " particles");
      sid = ids;
    }
    slot.resize(n);
    std::iota(slot.begin(), slot.end(), std::size_t{0});
    std::stable_sort(slot.begin(), slot.end(), [&](std::size_t a, std::size_t b) { return sid[a] < sid[b]; });
    for (std::size_t k = 1; k < n; ++k)
      if (sid[slot[k]] == sid[slot[k - 1]])
        throw Error("simulate: duplicate stream id " + std::to_string(sid[slot[k]]));
    x.resize(n * d);
    stream.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::copy_n(pos.begin() + static_cast<std::ptrdiff_t>(slot[k] * d), d, x.begin() + static_cast<std::ptrdiff_t>(k * d));
      stream[k] = sid[slot[k]] + stream_offset;
    }
  }

  EmpiricalMeasure cloud() const { return EmpiricalMeasure::uniform(x, d); }
};

struct Recorder
{
  PathEnsemble e;
  std::vector<std::size_t> record_step; // step index -> record slot or npos
  std::size_t slots = 0;

  Recorder(EnsembleKind kind, std::uint64_t seed, std::size_t n, std::size_t d, const std::vector<double>& pts,
           const std::vector<double>& record_times)
  {
    e.kind = kind;
    e.seed = seed;
    e.replicas = n;
    e.dim = d;
    record_step.assign(pts.size(), SIZE_MAX);
    for (std::size_t k = 0; k < pts.size(); ++k) {
      bool keep = record_times.empty() || k == 0 || k + 1 == pts.size();
      for (double t : record_times)
        keep = keep || same_time(t, pts[k]);
      if (keep) {
        record_step[k] = slots++;
        e.times.push_back(pts[k]);
      }
    }
    e.paths.resize(n * slots * d);
  }

  void store(std::size_t step, const Population& p)
  {
    const std::size_t k = record_step[step];
    if (k == SIZE_MAX)
      return;
    for (std::size_t c = 0; c < p.n; ++c)
      for (std::size_t a = 0; a < p.d; ++a)
        e.paths[(p.slot[c] * slots + k) * p.d + a] = p.x[c * p.d + a];
  }
};

GridSpec auto_density_grid(const std::vector<double>& x)
{
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double pad = std::max(5.0, *hi - *lo);
  return GridSpec::covering(*lo - pad, *hi + pad, 1e-2);
}

// Builds the measure view of a cloud, adding a KDE when the coefficients need
// a density.
class ViewBuilder
{
public:
  ViewBuilder(const CoefficientSet& c, const SimConfig& cfg, const std::vector<double>& x0)
    : needs_(c.needs_density)
    , fixed_h_(cfg.bandwidth)
    , refresh_(std::max(1, cfg.bandwidth_refresh))
  {
    if (needs_) {
      if (c.dim != 1)
        throw Error("simulate: density-dependent coefficients need d = 1");
      grid_ = cfg.density_grid.cells > 0 ? cfg.density_grid : auto_density_grid(x0);
    }
  }

  MeasureView operator()(const EmpiricalMeasure& cloud, std::size_t step, double& sup)
  {
    if (!needs_)
      return MeasureView(cloud);
    if (fixed_h_ > 0.0) {
      h_ = fixed_h_;
    } else if (step % static_cast<std::size_t>(refresh_) == 0 || h_ <= 0.0) {
      h_ = default_bandwidth(cloud);
    }
    auto rho = kde_density_binned(cloud, grid_, h_);
    sup = std::max(sup, rho.sup_norm());
    return MeasureView(cloud, rho);
  }

private:
  bool needs_;
  double fixed_h_;
  int refresh_;
  double h_ = 0.0;
  GridSpec grid_{0.0, 0.0, 0};
};

// One Euler-Maruyama step for every particle of p.
void advance(Population& p, const DriftFn& b, const DiffusionFn& sigma, std::size_t m, double t, double dt,
             std::uint64_t step, std::uint64_t seed, const MeasureView& view)
{
  const std::size_t d = p.d;
  std::vector<double> drift(d), sig(d * m), dw(m);
  const double sq = std::sqrt(dt);
  for (std::size_t k = 0; k < p.n; ++k) {
    const std::span<double> x(p.x.data() + k * d, d);
    try {
      b(t, x, view, drift);
      sigma(t, x, view, sig);
    } catch (const std::exception& ex) {
      throw Error("simulate: coefficient evaluation failed for " + where(p.slot[k], t) + ": " + ex.what());
    }
    NormalStream(seed, p.stream[k]).fill_normals(step, dw);
    for (std::size_t a = 0; a < d; ++a) {
      double inc = drift[a] * dt;
      for (std::size_t j = 0; j < m; ++j)
        inc += sig[a * m + j] * dw[j] * sq;
      if (!std::isfinite(inc))
        throw Error("simulate: non-finite increment for " + where(p.slot[k], t));
      x[a] += inc;
    }
  }
}

void check_sim(const SimConfig& cfg, double s, double t_end)
{
  if (!(cfg.dt > 0.0))
    throw Error("simulate: dt must be positive");
  if (cfg.n_particles == 0)
    throw Error("simulate: need at least one particle");
  if (!(t_end >= s))
    throw Error("simulate: t_end before s");
}

} // namespace

std::vector<double> initial_positions(const EmpiricalMeasure& law, std::size_t n, std::uint64_t seed)
{
  const std::size_t d = law.dim();
  if (law.size() == n && law.is_uniform())
    return law.points();
  std::vector<double> cdf(law.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < law.size(); ++i)
    cdf[i] = (acc += law.weight(i));
  const NormalStream rng(seed, kInitStream);
  std::vector<double> x(n * d);
  for (std::size_t j = 0; j < n; j += 4) {
    const auto u = rng.uniforms(j / 4);
    for (std::size_t r = 0; r < 4 && j + r < n; ++r) {
      const auto it = std::lower_bound(cdf.begin(), cdf.end(), u[r] * acc);
      const auto k = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), law.size() - 1);
      std::copy_n(law.point(k).begin(), d, x.begin() + static_cast<std::ptrdiff_t>((j + r) * d));
    }
  }
  return x;
}

std::size_t PathEnsemble::time_index(double t, double* offset) const
{
  if (times.empty())
    throw Error("PathEnsemble: empty ensemble");
  const double tol = 1e-12 * std::max(1.0, std::abs(t));
  if (t < times.front() - tol || t > times.back() + tol)
    throw Error("PathEnsemble: time " + std::to_string(t) + " outside the recorded horizon");
  auto it = std::lower_bound(times.begin(), times.end(), t);
  std::size_t k = static_cast<std::size_t>(it - times.begin());
  if (k == times.size() || (k > 0 && std::abs(times[k - 1] - t) <= std::abs(times[k] - t)))
    --k;
  if (offset)
    *offset = times[k] - t;
  return k;
}

EmpiricalMeasure marginal(const PathEnsemble& e, double t, double* offset)
{
  const std::size_t k = e.time_index(t, offset);
  std::vector<double> x(e.replicas * e.dim);
  for (std::size_t r = 0; r < e.replicas; ++r)
    for (std::size_t a = 0; a < e.dim; ++a)
      x[r * e.dim + a] = e.at(r, k, a);
  return EmpiricalMeasure::uniform(std::move(x), e.dim);
}

void PathEnsemble::write_binary(const std::string& path) const
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("PathEnsemble: cannot open " + path + " for writing");
  const auto kind32 = static_cast<std::uint32_t>(kind);
  const std::uint64_t r = replicas, t = times.size(), d = dim;
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&kVersion), 4);
  out.write(reinterpret_cast<const char*>(&kind32), 4);
  out.write(reinterpret_cast<const char*>(&seed), 8);
  out.write(reinterpret_cast<const char*>(&r), 8);
  out.write(reinterpret_cast<const char*>(&t), 8);
  out.write(reinterpret_cast<const char*>(&d), 8);
  out.write(reinterpret_cast<const char*>(times.data()), static_cast<std::streamsize>(8 * times.size()));
  out.write(reinterpret_cast<const char*>(paths.data()), static_cast<std::streamsize>(8 * paths.size()));
  if (!out)
    throw Error("PathEnsemble: write failed for " + path);
}

PathEnsemble PathEnsemble::read_binary(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("PathEnsemble: cannot open " + path);
  char magic[8];
  std::uint32_t version = 0, kind32 = 0;
  std::uint64_t r = 0, t = 0, d = 0;
  PathEnsemble e;
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw Error("PathEnsemble: " + path + " is not an ensemble file");
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != kVersion)
    throw Error("PathEnsemble: unsupported version " + std::to_string(version));
  in.read(reinterpret_cast<char*>(&kind32), 4);
  in.read(reinterpret_cast<char*>(&e.seed), 8);
  in.read(reinterpret_cast<char*>(&r), 8);
  in.read(reinterpret_cast<char*>(&t), 8);
  in.read(reinterpret_cast<char*>(&d), 8);
  if (!in || kind32 > 1)
    throw Error("PathEnsemble: corrupt header in " + path);
  e.kind = static_cast<EnsembleKind>(kind32);
  e.replicas = r;
  e.dim = d;
  e.times.resize(t);
  e.paths.resize(r * t * d);
  in.read(reinterpret_cast<char*>(e.times.data()), static_cast<std::streamsize>(8 * t));
  in.read(reinterpret_cast<char*>(e.paths.data()), static_cast<std::streamsize>(8 * e.paths.size()));
  if (!in)
    throw Error("PathEnsemble: truncated payload in " + path);
  return e;
}

MeasureFlow::MeasureFlow(double start, double end, std::vector<double> times, Lookup lookup)
  : start_(start)
  , end_(end)
  , times_(std::move(times))
  , lookup_(std::move(lookup))
{}

MeasureFlow MeasureFlow::from_path(const DensityPath& path)
{
  auto shared = std::make_shared<const DensityPath>(path);
  return {path.start(), path.end(), path.times, [shared](double t) { return MeasureView(shared->state_at(t)); }};
}

MeasureFlow MeasureFlow::from_ensemble(std::shared_ptr<const PathEnsemble> e, GridSpec density_grid, double bandwidth)
{
  const double s = e->times.front(), t = e->times.back();
  auto times = e->times;
  return {s, t, std::move(times), [e, density_grid, bandwidth](double when) {
            const auto cloud = marginal(*e, when);
            if (density_grid.cells == 0)
              return MeasureView(cloud);
            const double h = bandwidth > 0.0 ? bandwidth : default_bandwidth(cloud);
            return MeasureView(cloud, kde_density_binned(cloud, density_grid, h));
          }};
}

bool MeasureFlow::covers(double s, double t) const
{
  return s >= start_ - 1e-12 * std::max(1.0, std::abs(s)) && t <= end_ + 1e-12 * std::max(1.0, std::abs(t));
}

PathEnsemble simulate_mckean_vlasov(const EmpiricalMeasure& theta0, const CoefficientSet& c, double s, double t_end,
                                    const SimConfig& cfg)
{
  check_sim(cfg, s, t_end);
  if (theta0.dim() != c.dim)
    throw Error("simulate_mckean_vlasov: initial law dimension differs from coefficient dimension");
  const auto x0 = initial_positions(theta0, cfg.n_particles, cfg.seed);
  Population p(x0, c.dim, cfg.stream_ids, 0);
  const auto pts = time_grid(s, t_end, cfg.dt, cfg.record_times);
  Recorder rec(EnsembleKind::mckean_vlasov, cfg.seed, p.n, p.d, pts, cfg.record_times);
  ViewBuilder views(c, cfg, x0);
  rec.store(0, p);
  for (std::size_t n = 1; n < pts.size(); ++n) {
    const double t0 = pts[n - 1];
    const auto view = views(p.cloud(), n - 1, rec.e.max_kde_sup);
    advance(p, c.b, c.sigma, c.noise_dim, t0, pts[n] - t0, n - 1 + cfg.step_offset, cfg.seed, view);
    rec.store(n, p);
  }
  return std::move(rec.e);
}

PathEnsemble simulate_frozen(const EmpiricalMeasure& x0_law, const MeasureFlow& flow, const CoefficientSet& c, double s,
                             double t_end, const SimConfig& cfg)
{
  check_sim(cfg, s, t_end);
  if (!flow.covers(s, t_end))
    throw Error("simulate_frozen: flow covers [" + std::to_string(flow.start()) + ", " + std::to_string(flow.end()) +
                "], not [" + std::to_string(s) + ", " + std::to_string(t_end) + "]");
  if (x0_law.dim() != c.dim)
    throw Error("simulate_frozen: initial law dimension differs from coefficient dimension");
  const auto x0 = initial_positions(x0_law, cfg.n_particles, cfg.seed);
  Population p(x0, c.dim, cfg.stream_ids, 0);
  const auto pts = time_grid(s, t_end, cfg.dt, cfg.record_times);
  Recorder rec(EnsembleKind::frozen_flow, cfg.seed, p.n, p.d, pts, cfg.record_times);
  rec.store(0, p);
  for (std::size_t n = 1; n < pts.size(); ++n) {
    const double t0 = pts[n - 1];
    const auto view = flow.view(t0);
    advance(p, c.b_bar, c.sigma_bar, c.noise_dim, t0, pts[n] - t0, n - 1 + cfg.step_offset, cfg.seed, view);
    rec.store(n, p);
  }
  return std::move(rec.e);
}

PathEnsemble simulate_frozen(const EmpiricalMeasure& x0_law, const DensityPath& flow, const CoefficientSet& c, double s,
                             double t_end, const SimConfig& cfg)
{
  return simulate_frozen(x0_law, MeasureFlow::from_path(flow), c, s, t_end, cfg);
}

CoupledEnsemble simulate_coupled(const EmpiricalMeasure& zeta0, const EmpiricalMeasure& theta0, const CoefficientSet& c,
                                 double s, double t_end, const SimConfig& cfg)
{
  check_sim(cfg, s, t_end);
  if (zeta0.dim() != c.dim || theta0.dim() != c.dim)
    throw Error("simulate_coupled: initial law dimension differs from coefficient dimension");
  const auto xm = initial_positions(zeta0, cfg.n_particles, cfg.seed);
  const auto xn = initial_positions(theta0, cfg.n_particles, cfg.seed ^ 0x5bd1e995u);
  Population pm(xm, c.dim, cfg.stream_ids, 0);
  Population pn(xn, c.dim, cfg.stream_ids, kCompanionStreamBase);
  const auto pts = time_grid(s, t_end, cfg.dt, cfg.record_times);
  Recorder rm(EnsembleKind::mckean_vlasov, cfg.seed, pm.n, pm.d, pts, cfg.record_times);
  Recorder rn(EnsembleKind::frozen_flow, cfg.seed, pn.n, pn.d, pts, cfg.record_times);
  ViewBuilder views(c, cfg, xm);
  rm.store(0, pm);
  rn.store(0, pn);
  for (std::size_t n = 1; n < pts.size(); ++n) {
    const double t0 = pts[n - 1], dt = pts[n] - t0;
    const auto view = views(pm.cloud(), n - 1, rm.e.max_kde_sup);
    advance(pm, c.b, c.sigma, c.noise_dim, t0, dt, n - 1 + cfg.step_offset, cfg.seed, view);
    advance(pn, c.b_bar, c.sigma_bar, c.noise_dim, t0, dt, n - 1 + cfg.step_offset, cfg.seed, view);
    rm.store(n, pm);
    rn.store(n, pn);
  }
  return {std::move(rm.e), std::move(rn.e)};
}

} // namespace mkv
