#pragma once

#include "mkvlab/coefficients.hpp"
#include "mkvlab/cylindrical.hpp"
#include "mkvlab/measure.hpp"

#include <string>
#include <vector>

namespace mkv {

enum class Scheme
{
  explicit_euler,
  semi_implicit
};

struct SolverConfig
{
  double dt = 1e-3;
  Scheme scheme = Scheme::semi_implicit;
  double cfl_safety = 0.9;
  //! Times to record besides the start. Empty records every step.
  std::vector<double> output_times;
  int max_newton = 20;
  double newton_tol = 1e-10;
  //! Abort once the cumulative clipped mass exceeds this.
  double clip_abort = 1e-6;
};

struct ConservationLog
{
  std::size_t steps = 0;
  double max_mass_error = 0.0;  //!< max over steps of |mass after - mass before|, before clipping
  double clipped_mass = 0.0;    //!< cumulative mass removed by clipping negatives
  double min_value = 0.0;       //!< most negative value seen before clipping
  int max_iterations = 0;       //!< Newton / Picard iterations, worst step
  double max_residual = 0.0;    //!< final nonlinear residual, worst step
  double boundary_mass = 0.0;   //!< max mass held by the two edge cells
};

//! Density path on a shared grid.
struct DensityPath
{
  GridSpec grid;
  std::vector<double> times;
  std::vector<GridDensity1D> states;
  ConservationLog log;

  double start() const { return times.front(); }
  double end() const { return times.back(); }
  bool covers(double s, double t) const;
  //! Stored state at t, or the linear interpolation of its neighbours.
  GridDensity1D state_at(double t) const;
  //! Index of a stored time equal to t (within 1e-12 relative), or -1.
  std::ptrdiff_t index_of(double t) const;
};

//! Nonlinear FPE  d_t u = 1/2 d_xx (a u) - d_x (b u)  with a = sigma sigma^*,
//! b evaluated on the current density (no-flux boundaries, finite volumes).
DensityPath solve_nonlinear_fpe(const GridDensity1D& u0, const CoefficientSet& c, double s, double t_end,
                                const SolverConfig& cfg);

//! Linear FPE driven by (b_bar, sigma_bar) evaluated along a stored flow.
DensityPath solve_frozen_fpe(const GridDensity1D& nu0, const DensityPath& flow, const CoefficientSet& c, double s,
                             double t_end, const SolverConfig& cfg);
DensityPath solve_frozen_fpe(const GridDensity1D& nu0, const DensityPath& flow, const CoefficientSet& c,
                             const SolverConfig& cfg);

//! mu_t(h) - mu_s(h) - int_s^t mu_r(L_{r,mu_r} h) dr at every path time
//! (trapezoidal rule in time). With `flow`, the measure argument of the
//! coefficients is the flow state and the companion pair is used.
std::vector<double> fpe_weak_residual(const DensityPath& path, const CoefficientSet& c, const TestFunction& h,
                                      const DensityPath* flow = nullptr);

//! Process-wide totals over every solve, for suite-level conservation checks.
struct FpeAudit
{
  std::size_t solves = 0;
  std::size_t steps = 0;
  double max_mass_error = 0.0;
  double clipped_mass = 0.0;
  double min_value = 0.0;
};
FpeAudit fpe_audit();
void reset_fpe_audit();

} // namespace mkv
