#include "mkvlab/coefficients.hpp"

#include "mkvlab/error.hpp"
#include "mkvlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mkv {

MeasureView::MeasureView(std::shared_ptr<const EmpiricalMeasure> atoms, std::shared_ptr<const GridDensity1D> density)
  : atoms_(std::move(atoms))
  , density_(std::move(density))
{
  if (!atoms_)
    throw Error("MeasureView: null measure");
  if (density_ && atoms_->dim() != 1)
    throw Error("MeasureView: density views are 1-D only");
  moments_ = moments(*atoms_);
}

MeasureView::MeasureView(const EmpiricalMeasure& mu)
  : MeasureView(std::make_shared<const EmpiricalMeasure>(mu))
{}

MeasureView::MeasureView(const GridDensity1D& rho)
  : MeasureView(std::make_shared<const EmpiricalMeasure>(grid_to_measure(rho)), std::make_shared<const GridDensity1D>(rho))
{}

MeasureView::MeasureView(const EmpiricalMeasure& mu, const GridDensity1D& rho)
  : MeasureView(std::make_shared<const EmpiricalMeasure>(mu), std::make_shared<const GridDensity1D>(rho))
{}

const GridDensity1D& MeasureView::density() const
{
  if (!density_)
    throw Error("MeasureView: measure has no density view");
  return *density_;
}

double MeasureView::density_at(double x) const
{
  return density().density_at(x);
}

double MeasureView::norm2() const
{
  return std::sqrt(moments_.second_moment);
}

CoefficientSet CoefficientSet::symmetric() const
{
  CoefficientSet c = *this;
  c.b_bar = b;
  c.sigma_bar = sigma;
  return c;
}

CoefficientSet CoefficientSet::companion() const
{
  CoefficientSet c = *this;
  c.b = b_bar;
  c.sigma = sigma_bar;
  // the beta shortcut is only valid for the main pair
  c.nemytskii = nullptr;
  return c;
}

void CoefficientSet::drift(double t, std::span<const double> x, const MeasureView& mu, std::span<double> out) const
{
  b(t, x, mu, out);
}

namespace {

void sigma_to_a(std::span<const double> s, std::size_t d, std::size_t m, std::span<double> a)
{
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < m; ++k)
        acc += s[i * m + k] * s[j * m + k];
      a[i * d + j] = acc;
    }
}

double a1_of(const DiffusionFn& sig, std::size_t m, double t, double x, const MeasureView& mu)
{
  double buf[8];
  std::vector<double> heap;
  std::span<double> s;
  if (m <= 8) {
    s = std::span<double>(buf, m);
  } else {
    heap.resize(m);
    s = heap;
  }
  sig(t, std::span<const double>(&x, 1), mu, s);
  double acc = 0.0;
  for (double v : s)
    acc += v * v;
  return acc;
}

double b1_of(const DriftFn& drift, double t, double x, const MeasureView& mu)
{
  double out = 0.0;
  drift(t, std::span<const double>(&x, 1), mu, std::span<double>(&out, 1));
  return out;
}

} // namespace

void CoefficientSet::diffusion_matrix(double t, std::span<const double> x, const MeasureView& mu, std::span<double> out) const
{
  std::vector<double> s(dim * noise_dim);
  sigma(t, x, mu, s);
  sigma_to_a(s, dim, noise_dim, out);
}

double CoefficientSet::a1(double t, double x, const MeasureView& mu) const
{
  return a1_of(sigma, noise_dim, t, x, mu);
}

double CoefficientSet::b1(double t, double x, const MeasureView& mu) const
{
  return b1_of(b, t, x, mu);
}

double CoefficientSet::a1_bar(double t, double x, const MeasureView& mu) const
{
  return a1_of(sigma_bar, noise_dim, t, x, mu);
}

double CoefficientSet::b1_bar(double t, double x, const MeasureView& mu) const
{
  return b1_of(b_bar, t, x, mu);
}

double NLDBMParams::ratio(double u) const
{
  if (u == 0.0)
    return beta_prime(0.0);
  return beta(u) / u;
}

void NLDBMParams::set_potential(double c, double a)
{
  C = c;
  alpha = a;
  Phi = [c, a](double x) { return c * std::pow(1.0 + x * x, a); };
  grad_Phi = [c, a](double x) { return 2.0 * c * a * x * std::pow(1.0 + x * x, a - 1.0); };
  // sup |2 C a x (1+x^2)^{a-1}| for a <= 1/2 is attained at x^2 = 1/(1-2a) (or at infinity for a = 1/2)
  if (a >= 0.5) {
    D_bound = 2.0 * c * a;
  } else {
    const double x2 = 1.0 / (1.0 - 2.0 * a);
    D_bound = 2.0 * c * a * std::sqrt(x2) * std::pow(1.0 + x2, a - 1.0);
  }
  // |Phi''| is maximal at x = 0 for a in (0, 1/2]
  D_lipschitz = 2.0 * c * a;
}

NLDBMParams NLDBMParams::canonical()
{
  NLDBMParams p;
  p.beta = [](double r) { return 2.0 * r + std::atan(r); };
  p.beta_prime = [](double r) { return 2.0 + 1.0 / (1.0 + r * r); };
  p.gamma = 2.0;
  p.gamma1 = 3.0;
  p.b_scalar = [](double r) { return 1.0 / (1.0 + r * r); };
  p.b_scalar_prime = [](double r) { return -2.0 * r / ((1.0 + r * r) * (1.0 + r * r)); };
  p.b_bound = 1.0;
  p.set_potential(1.0, 0.5);
  p.name = "nldbm";
  return p;
}

NLDBMParams NLDBMParams::linear(double b_const)
{
  NLDBMParams p;
  p.beta = [](double r) { return r; };
  p.beta_prime = [](double) { return 1.0; };
  p.gamma = 1.0;
  p.gamma1 = 1.0;
  p.b_scalar = [b_const](double) { return b_const; };
  p.b_scalar_prime = [](double) { return 0.0; };
  p.b_bound = std::abs(b_const);
  p.set_potential(1.0, 0.5);
  p.name = "nldbm-linear";
  return p;
}

CoefficientSet nldbm_coefficients(const NLDBMParams& p)
{
  if (!p.beta || !p.beta_prime || !p.b_scalar || !p.grad_Phi)
    throw Error("nldbm_coefficients: beta, beta_prime, b_scalar and grad_Phi are required");
  auto shared = std::make_shared<const NLDBMParams>(p);
  CoefficientSet c;
  c.dim = 1;
  c.noise_dim = 1;
  c.needs_density = true;
  c.time_homogeneous = true;
  c.b = [shared](double, std::span<const double> x, const MeasureView& mu, std::span<double> out) {
    const double u = mu.density_at(x[0]);
    out[0] = shared->b_scalar(u) * shared->D(x[0]);
  };
  c.sigma = [shared](double, std::span<const double> x, const MeasureView& mu, std::span<double> out) {
    const double u = mu.density_at(x[0]);
    out[0] = std::sqrt(shared->ratio(u));
  };
  c.b_bar = c.b;
  c.sigma_bar = c.sigma;
  c.nemytskii = shared;
  c.family = p.name;
  c.params = {{"gamma", p.gamma}, {"gamma1", p.gamma1}, {"C", p.C}, {"alpha", p.alpha}};
  return c;
}

MeanFieldOU meanfield_ou_coefficients(double lambda0, double kappa0, double sigma0, std::size_t dim)
{
  if (dim == 0)
    throw Error("meanfield_ou_coefficients: dim must be positive");
  MeanFieldOU r;
  auto& c = r.coeffs;
  c.dim = dim;
  c.noise_dim = dim;
  c.b = [lambda0, kappa0](double, std::span<const double> x, const MeasureView& mu, std::span<double> out) {
    const auto& m = mu.mean();
    for (std::size_t a = 0; a < x.size(); ++a)
      out[a] = -lambda0 * x[a] + kappa0 * m[a];
  };
  c.sigma = [sigma0, dim](double, std::span<const double>, const MeasureView&, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t a = 0; a < dim; ++a)
      out[a * dim + a] = sigma0;
  };
  c.b_bar = c.b;
  c.sigma_bar = c.sigma;
  c.family = "meanfield-ou";
  c.params = {{"lambda0", lambda0}, {"kappa0", kappa0}, {"sigma0", sigma0}};

  const double ak = std::abs(kappa0);
  auto& k = r.constants;
  k.lambda = 2.0 * lambda0 - ak;
  k.kappa = ak;
  k.lambda_bar = k.lambda;
  k.kappa_bar = k.kappa;
  // |b| + |sigma| + |b_bar| + |sigma_bar| <= 2 lambda0 |x| + 2 |kappa0| ||mu||_2 + 2 sigma0 sqrt(d)
  const double need = 2.0 * std::max({lambda0, ak, sigma0 * std::sqrt(static_cast<double>(dim))});
  k.K = std::max(std::max({lambda0, ak, sigma0}) + 1.0, need);
  return r;
}

CoefficientSet heat_coefficients(double sigma0, std::size_t dim)
{
  CoefficientSet c;
  c.dim = dim;
  c.noise_dim = dim;
  c.b = [](double, std::span<const double>, const MeasureView&, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  };
  c.sigma = [sigma0, dim](double, std::span<const double>, const MeasureView&, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t a = 0; a < dim; ++a)
      out[a * dim + a] = sigma0;
  };
  c.b_bar = c.b;
  c.sigma_bar = c.sigma;
  c.family = "heat";
  c.params = {{"sigma0", sigma0}};
  return c;
}

bool HypothesisReport::passed() const
{
  return std::all_of(checks.begin(), checks.end(), [](const HypothesisCheck& c) { return c.passed; });
}

const HypothesisCheck& HypothesisReport::at(const std::string& name) const
{
  for (const auto& c : checks)
    if (c.name == name)
      return c;
  throw Error("HypothesisReport: no check named " + name);
}

namespace {

class Sampler
{
public:
  Sampler(const SampleBox& box, std::uint64_t stream)
    : rng_(box.seed, stream)
    , lo_(box.lo)
    , hi_(box.hi)
  {}

  double next()
  {
    if (k_ == 4) {
      buf_ = rng_.uniforms(step_++);
      k_ = 0;
    }
    return lo_ + (hi_ - lo_) * buf_[k_++];
  }

private:
  NormalStream rng_;
  double lo_, hi_;
  std::uint64_t step_ = 0;
  std::array<double, 4> buf_{};
  int k_ = 4;
};

struct Tracker
{
  HypothesisCheck c;
  explicit Tracker(std::string name)
  {
    c.name = std::move(name);
    c.worst_margin = std::numeric_limits<double>::infinity();
  }
  void add(double margin)
  {
    ++c.samples;
    if (!(margin >= c.worst_margin))
      c.worst_margin = std::isnan(margin) ? -std::numeric_limits<double>::infinity() : margin;
  }
  HypothesisCheck done()
  {
    c.passed = c.worst_margin >= -kHypothesisTolerance;
    return c;
  }
};

double norm(std::span<const double> v)
{
  double s = 0.0;
  for (double x : v)
    s += x * x;
  return std::sqrt(s);
}

// W2^2 between two equal-weight two-atom measures: min over both pairings.
double w2sq_two_atoms(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu)
{
  auto d2 = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t a = 0; a < mu.dim(); ++a)
      s += (mu.point(i)[a] - nu.point(j)[a]) * (mu.point(i)[a] - nu.point(j)[a]);
    return s;
  };
  return 0.5 * std::min(d2(0, 0) + d2(1, 1), d2(0, 1) + d2(1, 0));
}

} // namespace

HypothesisReport validate_hypotheses(const NLDBMParams& p, const SampleBox& box)
{
  Tracker beta0("beta_zero"), order("gamma_order"), lower("beta_prime_lower"), upper("beta_prime_upper"),
    bb("b_bounded"), db("D_bounded"), dl("D_lipschitz"), phi("Phi_lower");
  beta0.add(-std::abs(p.beta(0.0)));
  order.add(std::min(p.gamma, p.gamma1 - p.gamma));
  Sampler s(box, 0);
  auto visit = [&](double r, double x, double y) {
    const double bp = p.beta_prime(r);
    lower.add(bp - p.gamma);
    upper.add(p.gamma1 - bp);
    const double b = p.b_scalar(r);
    bb.add(p.b_bound - std::abs(b));
    if (p.b_scalar_prime && !std::isfinite(p.b_scalar_prime(r)))
      bb.add(-std::numeric_limits<double>::infinity());
    db.add(p.D_bound - std::abs(p.D(x)));
    dl.add(p.D_lipschitz * std::abs(x - y) - std::abs(p.D(x) - p.D(y)));
    phi.add(p.Phi(x) - 1.0);
  };
  // the box corners and the origin are always visited
  visit(0.0, 0.0, 0.0);
  visit(box.lo, box.lo, box.hi);
  visit(box.hi, box.hi, box.lo);
  for (std::size_t i = 0; i < box.n_samples; ++i) {
    const double r = s.next(), x = s.next(), y = s.next();
    visit(r, x, y);
  }
  HypothesisReport rep;
  for (auto* t : {&beta0, &order, &lower, &upper, &bb, &db, &dl, &phi})
    rep.checks.push_back(t->done());
  return rep;
}

HypothesisReport validate_hypotheses(const CoefficientSet& c, const MonotonicityConstants& k, const SampleBox& box)
{
  if (c.needs_density)
    throw Error("validate_hypotheses: the monotonicity condition is checked on two-atom measures, which have no density");
  const std::size_t d = c.dim, m = c.noise_dim;
  Tracker growth("linear_growth"), mono("monotone"), mono_bar("monotone_bar"), homog("time_homogeneous");
  Sampler s(box, 1);
  std::vector<double> x(d), y(d), bx(d), by(d), bbx(d), sx(d * m), sy(d * m), sbx(d * m);
  std::vector<double> bby(d), sby(d * m);
  auto fill = [&](std::vector<double>& v) {
    for (double& e : v)
      e = s.next();
  };
  std::vector<double> pa(2 * d), pb(2 * d);
  for (std::size_t n = 0; n < box.n_samples; ++n) {
    fill(x);
    fill(y);
    fill(pa);
    fill(pb);
    const double t = 0.5 * (s.next() - box.lo) / (box.hi - box.lo);
    const auto mu = EmpiricalMeasure::uniform(pa, d);
    const auto nu = EmpiricalMeasure::uniform(pb, d);
    const MeasureView vm(mu), vn(nu);
    c.b(t, x, vm, bx);
    c.sigma(t, x, vm, sx);
    c.b_bar(t, x, vm, bbx);
    c.sigma_bar(t, x, vm, sbx);
    growth.add(k.K * (1.0 + norm(x) + vm.norm2()) - (norm(bx) + norm(sx) + norm(bbx) + norm(sbx)));

    c.b(t, y, vn, by);
    c.sigma(t, y, vn, sy);
    c.b_bar(t, y, vn, bby);
    c.sigma_bar(t, y, vn, sby);
    const double w2sq = w2sq_two_atoms(mu, nu);
    double dxy = 0.0, ip = 0.0, ip_bar = 0.0, hs = 0.0, hs_bar = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      const double z = x[a] - y[a];
      dxy += z * z;
      ip += (bx[a] - by[a]) * z;
      ip_bar += (bbx[a] - bby[a]) * z;
    }
    for (std::size_t a = 0; a < d * m; ++a) {
      hs += (sx[a] - sy[a]) * (sx[a] - sy[a]);
      hs_bar += (sbx[a] - sby[a]) * (sbx[a] - sby[a]);
    }
    mono.add(k.kappa * w2sq - k.lambda * dxy - (2.0 * ip + hs));
    mono_bar.add(k.kappa_bar * w2sq - k.lambda_bar * dxy - (2.0 * ip_bar + hs_bar));

    if (c.time_homogeneous) {
      std::vector<double> b2(d);
      c.b(t + 0.37, x, vm, b2);
      double diff = 0.0;
      for (std::size_t a = 0; a < d; ++a)
        diff = std::max(diff, std::abs(b2[a] - bx[a]));
      homog.add(-diff);
    }
  }
  HypothesisReport rep;
  rep.checks = {growth.done(), mono.done(), mono_bar.done()};
  if (c.time_homogeneous)
    rep.checks.push_back(homog.done());
  return rep;
}

} // namespace mkv
