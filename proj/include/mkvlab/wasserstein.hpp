#pragma once

#include "mkvlab/measure.hpp"

#include <vector>

namespace mkv {

enum class W2Method
{
  exact1d,
  sinkhorn
};

struct SinkhornOptions
{
  //! Entropic regularization; <= 0 selects 1e-2 * median squared pairwise distance.
  double epsilon = 0.0;
  double tolerance = 1e-8; //!< max marginal error (L1) at stop
  int max_iterations = 10000;
};

//! Coupling between two empirical measures, dense N x N' (row-major).
struct TransportPlan
{
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> coupling;
  double cost = 0.0;            //!< sum pi_ij |x_i - y_j|^2
  double marginal_error = 0.0;  //!< L1 deviation of both marginals
  int iterations = 0;

  double at(std::size_t i, std::size_t j) const { return coupling[i * cols + j]; }
};

//! Monotone (quantile) coupling of two 1-D clouds; optimal for quadratic cost.
TransportPlan exact1d_plan(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

//! Log-domain Sinkhorn iterations. Throws ConvergenceError carrying the final
//! marginal error if the tolerance is not met within max_iterations. The
//! returned coupling is rounded onto the exact marginals.
TransportPlan sinkhorn_plan(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const SinkhornOptions& opts = {});

//! Quadratic Wasserstein distance.
double wasserstein2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, W2Method method = W2Method::exact1d,
                    const SinkhornOptions& opts = {});

//! W2 between a 1-D cloud and N(mean, var), integrating the squared quantile
//! difference in closed form atom by atom.
double wasserstein2_to_gaussian(const EmpiricalMeasure& mu, double mean, double var);
double wasserstein2_to_gaussian(const GridDensity1D& rho, double mean, double var);

//! 1-D W1 as the integral of |F_mu - F_nu|, exact for piecewise-constant
//! densities (linear CDF within each cell).
double wasserstein1(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);
double wasserstein1(const EmpiricalMeasure& mu, const GridDensity1D& rho);

//! Closed form for two 1-D Gaussians.
double wasserstein2_gaussians(double m1, double v1, double m2, double v2);

} // namespace mkv
