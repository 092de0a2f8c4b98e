#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace mkv {

//! Vector field R^d -> R^d, writes its value at `x` into `out`.
using VectorField = std::function<void(std::span<const double> x, std::span<double> out)>;

//! Weighted particle cloud representing a probability measure on R^d.
//! Points are stored row-major (N x d). Weights are renormalized on
//! construction, so they sum to one up to rounding.
class EmpiricalMeasure
{
public:
  EmpiricalMeasure(std::vector<double> points, std::vector<double> weights, std::size_t dim = 1);

  //! Equal weights 1/N.
  static EmpiricalMeasure uniform(std::vector<double> points, std::size_t dim = 1);
  static EmpiricalMeasure dirac(std::span<const double> x);
  static EmpiricalMeasure dirac(double x) { return dirac(std::span<const double>(&x, 1)); }

  std::size_t size() const { return weights_.size(); }
  std::size_t dim() const { return dim_; }
  std::span<const double> point(std::size_t i) const { return {points_.data() + i * dim_, dim_}; }
  double weight(std::size_t i) const { return weights_[i]; }
  const std::vector<double>& points() const { return points_; }
  const std::vector<double>& weights() const { return weights_; }
  bool is_uniform() const;

  //! Integral of a scalar test function.
  double integrate(const std::function<double(std::span<const double>)>& h) const;

private:
  std::vector<double> points_;
  std::vector<double> weights_;
  std::size_t dim_;
};

//! Uniform 1-D grid of `cells` cells starting at `x_min`.
struct GridSpec
{
  double x_min = 0.0;
  double dx = 1.0;
  std::size_t cells = 1;

  static GridSpec covering(double x_min, double x_max, double dx);
  double x_max() const { return x_min + dx * static_cast<double>(cells); }
  double center(std::size_t i) const { return x_min + (static_cast<double>(i) + 0.5) * dx; }
  //! Index of the cell containing x, or -1 outside the grid.
  std::ptrdiff_t cell_of(double x) const;
  bool same_as(const GridSpec& other, double tol = 1e-12) const;
};

//! Cell-averaged probability density on a uniform 1-D grid.
//! Invariants: all values >= 0 and dx * sum(values) == 1 within 1e-10.
class GridDensity1D
{
public:
  GridDensity1D(GridSpec grid, std::vector<double> values);

  //! Rescales arbitrary nonnegative values to unit mass.
  static GridDensity1D normalized(GridSpec grid, std::vector<double> values);
  //! Cell averages of a density given pointwise (midpoint rule), normalized.
  static GridDensity1D from_function(GridSpec grid, const std::function<double(double)>& density);
  static GridDensity1D gaussian(GridSpec grid, double mean, double var);

  const GridSpec& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double mass() const;
  //! Lebesgue-point version of the density: cell lookup, zero off-grid.
  double density_at(double x) const;
  double integrate(const std::function<double(double)>& h) const;
  double sup_norm() const;

private:
  GridSpec grid_;
  std::vector<double> values_;
};

struct Moments
{
  std::vector<double> mean;
  std::vector<double> covariance; // d x d, row-major
  double second_moment = 0.0;     // ||mu||_2^2
};

Moments moments(const EmpiricalMeasure& mu);
Moments moments(const GridDensity1D& rho);

//! Cell centers become atoms with weights values * dx.
EmpiricalMeasure grid_to_measure(const GridDensity1D& rho);

//! Linear (cloud-in-cell) deposit of a 1-D cloud onto a grid; mass that
//! falls outside is reported through `lost_mass` and the result renormalized.
GridDensity1D deposit_to_grid(const EmpiricalMeasure& mu, const GridSpec& grid, double* lost_mass = nullptr);

//! Atom-wise map x -> x + t * phi(x); weights untouched.
EmpiricalMeasure pushforward(const EmpiricalMeasure& mu, const VectorField& phi, double t);
EmpiricalMeasure pushforward(const EmpiricalMeasure& mu, const std::function<double(double)>& phi, double t);

//! Silverman-style default N^{-1/5} * sample standard deviation.
double default_bandwidth(const EmpiricalMeasure& mu);

//! Gaussian-kernel density estimate evaluated at cell centers and
//! renormalized to unit mass. Throws if more than 1e-6 of the kernel mass
//! falls outside the grid.
GridDensity1D kde_density(const EmpiricalMeasure& mu, const GridSpec& grid, double bandwidth);

//! Fast variant: linear binning followed by a truncated kernel convolution.
//! Used inside time stepping loops; error O(dx^2) against `kde_density`.
GridDensity1D kde_density_binned(const EmpiricalMeasure& mu, const GridSpec& grid, double bandwidth);

//! Inverse-CDF sampling from the piecewise-constant density.
EmpiricalMeasure sample_density(const GridDensity1D& rho, std::size_t n, std::uint64_t seed, std::uint64_t stream = 0);

//! L1 distance between two densities on the same grid.
double l1_distance(const GridDensity1D& a, const GridDensity1D& b);

} // namespace mkv
