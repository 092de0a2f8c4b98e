#pragma once

#include "mkvlab/coefficients.hpp"
#include "mkvlab/cylindrical.hpp"
#include "mkvlab/particles.hpp"

#include <optional>
#include <vector>

namespace mkv {

enum class InvariantMethod
{
  long_run,
  moment_fixed_point
};

struct GaussianLaw
{
  double mean = 0.0;
  double var = 1.0;
};

//! Invariant laws of the pair. When closed forms are known they are kept in
//! `*_gaussian`; the clouds then hold N quantile atoms of those Gaussians.
struct InvariantPair
{
  EmpiricalMeasure mu_inf = EmpiricalMeasure::dirac(0.0);
  EmpiricalMeasure nu_inf = EmpiricalMeasure::dirac(0.0);
  std::optional<GaussianLaw> mu_gaussian, nu_gaussian;
  double horizon_used = 0.0; //!< long_run only
  double last_increment = 0.0; //!< long_run only: W2 between the last two window ends
};

struct InvariantConfig
{
  SimConfig sim;
  double window = 1.0;
  double max_horizon = 50.0;
  //! Increment threshold; <= 0 selects max(1e-4, 2 N^{-1/2}).
  double tol = 0.0;
  //! Consecutive windows that must stay below `tol`.
  int patience = 3;
};

//! Requires lambda > kappa. long_run runs the coupled particle system from
//! `start` in windows until `patience` successive window increments stay below
//! `tol` in W2.
InvariantPair find_invariant(const CoefficientSet& c, const MonotonicityConstants& k, InvariantMethod method,
                             const InvariantConfig& cfg, const EmpiricalMeasure& start = EmpiricalMeasure::dirac(0.0));

//! W2(mu_t, mu_inf)^2 bound with the kappa + lambda_bar = lambda limit taken continuously.
double decay_envelope(const MonotonicityConstants& k, double w2_zeta_sq, double w2_theta_sq, double t);

struct ErgodicityReport
{
  std::vector<double> times;
  std::vector<double> w2_mu, w2_nu;          //!< W2 to the invariant laws
  std::vector<double> err_mu_sq, err_nu_sq;  //!< bootstrap standard errors of the squared distances
  std::vector<double> bound;                 //!< envelope for the squared distance
  double w2_zeta = 0.0, w2_theta = 0.0;      //!< initial distances
  double fitted_rate = 0.0;                  //!< NaN when fewer than two tail points clear the noise floor
  std::size_t fit_points = 0;
  double noise_floor = 0.0;                  //!< W2 level below which points are dropped from the fit
  MonotonicityConstants constants;
  std::size_t violations_mu = 0;             //!< checkpoints with w2_mu^2 > bound + 3 err
  std::size_t violations_total = 0;          //!< same for w2_mu^2 + w2_nu^2
  //! |mu_t(h_j) - mu_inf(h_j)| per probe j and checkpoint.
  std::vector<std::vector<double>> probe_gaps;
};

struct DecayConfig
{
  SimConfig sim;
  std::size_t bootstrap = 40;
  std::vector<TestFunction> probes;
};

//! Coupled particle run from (zeta0, theta0) over [0, horizon] with
//! n_checkpoints evenly spaced checkpoints including both ends.
ErgodicityReport decay_study(const EmpiricalMeasure& zeta0, const EmpiricalMeasure& theta0, const CoefficientSet& c,
                             const MonotonicityConstants& k, const InvariantPair& inv, double horizon,
                             std::size_t n_checkpoints, const DecayConfig& cfg);

//! W2 to an invariant law: analytic quantile formula when Gaussian, exact 1-D transport otherwise.
double distance_to(const EmpiricalMeasure& cloud, const EmpiricalMeasure& target,
                   const std::optional<GaussianLaw>& gaussian);

} // namespace mkv
