#pragma once

#include "mkvlab/coefficients.hpp"
#include "mkvlab/fpe.hpp"
#include "mkvlab/measure.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mkv {

enum class EnsembleKind : std::uint32_t
{
  mckean_vlasov = 0,
  frozen_flow = 1
};

struct SimConfig
{
  std::size_t n_particles = 1000; //!< system size N, or replica count for frozen runs
  double dt = 1e-3;
  double bandwidth = 0.0;         //!< KDE bandwidth for Nemytskii coefficients; <= 0 selects N^{-1/5} sd
  int bandwidth_refresh = 100;    //!< steps between automatic bandwidth updates
  GridSpec density_grid{0.0, 0.0, 0}; //!< KDE grid; cells == 0 derives one from the initial cloud
  std::uint64_t seed = 1;
  //! Added to the step counter of every noise draw, so runs started at
  //! different times can share increments on a common absolute step grid.
  std::uint64_t step_offset = 0;
  //! Times to record besides the start; empty records every step.
  std::vector<double> record_times;
  //! Noise stream of each particle; empty means stream i for particle i.
  std::vector<std::uint64_t> stream_ids;
};

//! Replica paths stored replica-major: paths[(r * T + k) * dim + a].
struct PathEnsemble
{
  EnsembleKind kind = EnsembleKind::mckean_vlasov;
  std::uint64_t seed = 0;
  std::size_t replicas = 0;
  std::size_t dim = 1;
  std::vector<double> times;
  std::vector<double> paths;
  double max_kde_sup = 0.0; //!< largest KDE sup-norm seen (Nemytskii runs)

  double at(std::size_t r, std::size_t k, std::size_t a = 0) const
  {
    return paths[(r * times.size() + k) * dim + a];
  }
  //! Index of the recorded time nearest to t; throws outside the horizon.
  std::size_t time_index(double t, double* offset = nullptr) const;

  void write_binary(const std::string& path) const;
  static PathEnsemble read_binary(const std::string& path);
};

//! Uniform cloud over replicas at the recorded time nearest to t; the
//! snapping offset is reported through `offset`.
EmpiricalMeasure marginal(const PathEnsemble& e, double t, double* offset = nullptr);

//! Time-indexed family of measure views that frozen dynamics are driven by.
class MeasureFlow
{
public:
  using Lookup = std::function<MeasureView(double t)>;
  MeasureFlow(double start, double end, std::vector<double> times, Lookup lookup);

  //! Grid states; off-grid times are interpolated.
  static MeasureFlow from_path(const DensityPath& path);
  //! Particle marginals snapped to the nearest recorded time, with a KDE
  //! density view when `density_grid` has cells.
  static MeasureFlow from_ensemble(std::shared_ptr<const PathEnsemble> e, GridSpec density_grid = {0.0, 0.0, 0},
                                   double bandwidth = 0.0);

  double start() const { return start_; }
  double end() const { return end_; }
  bool covers(double s, double t) const;
  const std::vector<double>& times() const { return times_; }
  MeasureView view(double t) const { return lookup_(t); }

private:
  double start_, end_;
  std::vector<double> times_;
  Lookup lookup_;
};

//! Interacting N-particle Euler-Maruyama scheme; the law in the coefficients
//! is the empirical measure of all particles at the start of each step.
PathEnsemble simulate_mckean_vlasov(const EmpiricalMeasure& theta0, const CoefficientSet& c, double s, double t_end,
                                    const SimConfig& cfg);

//! Independent replicas of dX = b_bar(t, X, mu_t) dt + sigma_bar(t, X, mu_t) dW along a stored flow.
PathEnsemble simulate_frozen(const EmpiricalMeasure& x0_law, const MeasureFlow& flow, const CoefficientSet& c, double s,
                             double t_end, const SimConfig& cfg);
PathEnsemble simulate_frozen(const EmpiricalMeasure& x0_law, const DensityPath& flow, const CoefficientSet& c, double s,
                             double t_end, const SimConfig& cfg);

//! Both components at once: mean-field particles from zeta0 and companion
//! particles from theta0 driven by the mean-field particles' empirical law.
struct CoupledEnsemble
{
  PathEnsemble mu;
  PathEnsemble nu;
};
CoupledEnsemble simulate_coupled(const EmpiricalMeasure& zeta0, const EmpiricalMeasure& theta0, const CoefficientSet& c,
                                 double s, double t_end, const SimConfig& cfg);

//! Initial positions for n particles: the atoms themselves when the measure is
//! uniform with n atoms, otherwise n inverse-CDF draws over the atom weights.
std::vector<double> initial_positions(const EmpiricalMeasure& law, std::size_t n, std::uint64_t seed);

} // namespace mkv
