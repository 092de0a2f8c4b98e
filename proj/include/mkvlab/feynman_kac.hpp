#pragma once

#include "mkvlab/coefficients.hpp"
#include "mkvlab/fpe.hpp"
#include "mkvlab/particles.hpp"

#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace mkv {

using ScalarField = std::function<double(double t, std::span<const double> x, const MeasureView& mu)>;
using TerminalFn = std::function<double(std::span<const double> x, const MeasureView& mu)>;

struct FKProblem
{
  ScalarField V;        //!< potential; empty means V = 0
  double V_bound = std::numeric_limits<double>::infinity();
  ScalarField f_source; //!< empty means f = 0
  TerminalFn Phi;
  double T = 1.0;
  CoefficientSet coeffs;
  std::string name = "fk";
};

enum class FlowBackend
{
  particle,
  fpe
};

struct FKConfig
{
  SimConfig sim;                      //!< replicas = sim.n_particles, step = sim.dt
  FlowBackend flow_backend = FlowBackend::particle;
  std::size_t flow_particles = 10000; //!< used when the initial cloud is not already uniform
  SolverConfig solver;                //!< fpe backend
  GridSpec grid{0.0, 0.0, 0};         //!< fpe backend grid; cells == 0 derives one from mu
  bool keep_samples = false;
};

struct FKEstimate
{
  double value = 0.0;
  double stderr = 0.0; //!< sample standard deviation / sqrt(R)
  std::size_t n_replicas = 0;
  std::string config_hash;
  std::vector<double> samples; //!< per-replica values when requested
};

//! u(t, x, mu) = E[ Phi(X_T, P*_{t,T} mu) e^{int_t^T V} + int_t^T f e^{int_t^r V} dr ] along
//! X from x driven by the flow P*_{t,.} mu, which is computed once. Integrals
//! are left Riemann sums at the simulation step; replica noise sits on the
//! absolute step grid so estimates at nearby (t, x, mu) share increments.
FKEstimate fk_evaluate(const FKProblem& p, double t, std::span<const double> x, const EmpiricalMeasure& mu,
                       const FKConfig& cfg);
FKEstimate fk_evaluate(const FKProblem& p, double t, double x, const EmpiricalMeasure& mu, const FKConfig& cfg);

//! Central difference of g along the pushforward curve mu o (Id + eps phi)^{-1}.
double l_derivative_fd(const std::function<double(const EmpiricalMeasure&)>& g, const EmpiricalMeasure& mu,
                       const VectorField& phi, double eps);

struct FdSteps
{
  double dt_fd = 0.05;
  double dx_fd = 0.05;
  double eps_measure = 1e-3;
};

struct PdeResidualReport
{
  double u = 0.0;
  double dt_term = 0.0;      //!< d_t u
  double spatial_term = 0.0; //!< frozen generator applied to u(t, ., mu)
  double measure_term = 0.0; //!< measure part of the lifted generator
  double potential_term = 0.0;
  double source_term = 0.0;
  double residual = 0.0;     //!< sum of the above
  double stderr = 0.0;       //!< standard error of the residual over common-noise replicas
  double truncation = 0.0;   //!< C (dt_fd + dx_fd^2 + eps + dt)
  double budget = 0.0;       //!< truncation + 3 stderr
};

struct PdeResidualConfig
{
  FKConfig fk;
  FdSteps steps;
  double truncation_constant = 2.0;
  //! Refuse when 3 stderr exceeds this times (1 + |u|).
  double max_noise = 0.1;
};

//! d_t u + tilde-L_t u + V u + f at (t, x, mu), d = 1. Time and space
//! derivatives are central differences of fk_evaluate under common random
//! numbers; the measure part pairs the drift field with l_derivative_fd and
//! adds the diffusion part through antithetic atom spreading with Richardson
//! extrapolation. Throws when the Monte Carlo noise swamps the FD steps.
PdeResidualReport pde_residual(const FKProblem& p, double t, double x, const EmpiricalMeasure& mu,
                               const PdeResidualConfig& cfg);

struct TowerReport
{
  double direct = 0.0, direct_err = 0.0;
  double composed = 0.0, composed_err = 0.0;
  double interpolation = 0.0; //!< spread between linear and quadratic interpolation of the probe table
  double combined_err() const { return direct_err + composed_err + interpolation; }
};

//! u(t, x, mu) directly against the problem restarted at r with terminal data
//! u(r, ., P*_{t,r} mu) estimated on `probes` (sorted) and interpolated.
TowerReport fk_tower_check(const FKProblem& p, double t, double r, double x, const EmpiricalMeasure& mu,
                           const std::vector<double>& probes, const FKConfig& cfg);

} // namespace mkv
