#pragma once

#include "mkvlab/measure.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mkv {

//! What a coefficient field gets to see of the measure argument: the atoms,
//! cached moments, and (optionally) a density for Nemytskii evaluation.
class MeasureView
{
public:
  explicit MeasureView(std::shared_ptr<const EmpiricalMeasure> atoms,
                       std::shared_ptr<const GridDensity1D> density = nullptr);
  //! Cloud without density.
  explicit MeasureView(const EmpiricalMeasure& mu);
  //! Grid density; atoms are the cell centers.
  explicit MeasureView(const GridDensity1D& rho);
  //! Cloud together with an estimated density (KDE).
  MeasureView(const EmpiricalMeasure& mu, const GridDensity1D& rho);

  const EmpiricalMeasure& atoms() const { return *atoms_; }
  std::size_t dim() const { return atoms_->dim(); }
  bool has_density() const { return density_ != nullptr; }
  const GridDensity1D& density() const;
  //! Lebesgue-point density value (cell lookup, zero off-grid).
  double density_at(double x) const;
  const std::vector<double>& mean() const { return moments_.mean; }
  double second_moment() const { return moments_.second_moment; }
  //! ||mu||_2
  double norm2() const;

private:
  std::shared_ptr<const EmpiricalMeasure> atoms_;
  std::shared_ptr<const GridDensity1D> density_;
  Moments moments_;
};

using DriftFn = std::function<void(double t, std::span<const double> x, const MeasureView& mu, std::span<double> out)>;
//! Writes sigma(t, x, mu) as a d x m row-major matrix.
using DiffusionFn = DriftFn;

struct NLDBMParams;

//! b, sigma of the McKean-Vlasov equation and the companion pair b_bar,
//! sigma_bar driving the decoupled equation.
struct CoefficientSet
{
  std::size_t dim = 1;
  std::size_t noise_dim = 1;
  DriftFn b;
  DiffusionFn sigma;
  DriftFn b_bar;
  DiffusionFn sigma_bar;
  bool time_homogeneous = true;
  bool needs_density = false;
  //! Set for Nemytskii families; lets the FPE solver use beta directly.
  std::shared_ptr<const NLDBMParams> nemytskii;
  std::string family = "custom";
  std::map<std::string, double> params;

  //! Same set with (b_bar, sigma_bar) := (b, sigma).
  CoefficientSet symmetric() const;
  //! Swap in the companion pair as the main pair (used by frozen solvers).
  CoefficientSet companion() const;

  void drift(double t, std::span<const double> x, const MeasureView& mu, std::span<double> out) const;
  //! a = sigma sigma^*, d x d row-major.
  void diffusion_matrix(double t, std::span<const double> x, const MeasureView& mu, std::span<double> out) const;
  //! 1-D shortcuts: (sigma sigma^*)(t,x,mu) and b(t,x,mu).
  double a1(double t, double x, const MeasureView& mu) const;
  double b1(double t, double x, const MeasureView& mu) const;
  double a1_bar(double t, double x, const MeasureView& mu) const;
  double b1_bar(double t, double x, const MeasureView& mu) const;
};

//! Nonlinear distorted Brownian motion in d = 1:
//! b(x, mu) = b(u(x)) D(x), sigma sigma^* = beta(u(x)) / u(x), D = -Phi'.
struct NLDBMParams
{
  std::function<double(double)> beta;
  std::function<double(double)> beta_prime;
  double gamma = 1.0;
  double gamma1 = 1.0;
  std::function<double(double)> b_scalar;
  std::function<double(double)> b_scalar_prime;
  std::function<double(double)> Phi;
  std::function<double(double)> grad_Phi;
  double C = 1.0;
  double alpha = 0.5;
  double b_bound = 1.0;       //!< declared sup |b|
  double D_bound = 1.0;       //!< declared sup |D|
  double D_lipschitz = 1.0;   //!< declared Lipschitz constant of D
  std::string name = "nldbm";

  //! beta(u) / u with beta(0)/0 := beta'(0).
  double ratio(double u) const;
  double D(double x) const { return -grad_Phi(x); }

  //! beta(r) = 2r + arctan r, b(r) = 1/(1+r^2), Phi = (1+x^2)^{1/2}.
  static NLDBMParams canonical();
  //! beta(r) = r, constant b; with b = 0 this is the heat equation.
  static NLDBMParams linear(double b_const = 0.0);
  //! Phi(x) = C (1+x^2)^alpha.
  void set_potential(double C, double alpha);
};

struct MonotonicityConstants
{
  double K = 0.0;
  double lambda = 0.0;
  double kappa = 0.0;
  double lambda_bar = 0.0;
  double kappa_bar = 0.0;
};

CoefficientSet nldbm_coefficients(const NLDBMParams& p);

struct MeanFieldOU
{
  CoefficientSet coeffs;
  MonotonicityConstants constants;
};

//! b(x, mu) = -lambda0 x + kappa0 mean(mu), sigma = sigma0 Id.
MeanFieldOU meanfield_ou_coefficients(double lambda0, double kappa0, double sigma0, std::size_t dim = 1);

//! b = 0, sigma = sigma0 Id.
CoefficientSet heat_coefficients(double sigma0 = 1.0, std::size_t dim = 1);

struct SampleBox
{
  double lo = -10.0;
  double hi = 10.0;
  std::size_t n_samples = 10000;
  std::uint64_t seed = 12345;
};

struct HypothesisCheck
{
  std::string name;
  double worst_margin = 0.0; //!< min over samples of (rhs - lhs)
  bool passed = true;
  std::size_t samples = 0;
};

struct HypothesisReport
{
  std::vector<HypothesisCheck> checks;
  bool passed() const;
  const HypothesisCheck& at(const std::string& name) const;
};

//! Margins below this count as violations.
inline constexpr double kHypothesisTolerance = 1e-8;

//! Sampled check of the NLDBM structure conditions: beta(0) = 0, the growth
//! order gamma, bounds on beta', bounded b and D, Lipschitz D, Phi bounded below.
HypothesisReport validate_hypotheses(const NLDBMParams& p, const SampleBox& box = {});
//! Sampled check of linear growth and both monotonicity inequalities, using
//! two-atom measures.
HypothesisReport validate_hypotheses(const CoefficientSet& c, const MonotonicityConstants& k, const SampleBox& box = {});

} // namespace mkv
