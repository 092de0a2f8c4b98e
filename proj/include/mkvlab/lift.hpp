#pragma once

#include "mkvlab/coefficients.hpp"
#include "mkvlab/cylindrical.hpp"
#include "mkvlab/fpe.hpp"
#include "mkvlab/particles.hpp"

#include <optional>
#include <variant>
#include <vector>

namespace mkv {

//! G(x, mu) = h0(x) F(mu).
struct LiftedTestFunction
{
  TestFunction h0;
  CylindricalFunction F;

  double operator()(std::span<const double> x, const EmpiricalMeasure& mu) const { return h0(x) * F(mu); }
  double operator()(double x, const GridDensity1D& mu) const { return h0(x) * F(mu); }
};

//! nu x delta_mu: a spatial law paired with a Dirac mass at one measure.
struct ProductLaw
{
  std::variant<GridDensity1D, EmpiricalMeasure> spatial;
  GridDensity1D measure_atom;

  double integrate(const LiftedTestFunction& G) const;
};

enum class KernelBackend
{
  fpe,
  particle
};

enum class DiracMollifier
{
  one_cell, //!< all mass in the cell containing x
  hat       //!< split between the two nearest centres so the mean is exactly x
};

//! Approximate Dirac mass at x on the grid; `width` receives the support width.
GridDensity1D mollified_dirac(const GridSpec& grid, double x, DiracMollifier kind, double* width = nullptr);

struct KernelConfig
{
  SolverConfig solver;
  SimConfig sim;
  DiracMollifier mollifier = DiracMollifier::hat;
};

struct MarkovKernelState
{
  double s = 0.0, t = 0.0;
  double x = 0.0;
  GridDensity1D zeta;
  ProductLaw value;
  double mollifier_width = 0.0;
  KernelBackend backend = KernelBackend::fpe;
};

//! Sum_i d_i f(mu(h)) int [ 1/2 a h_i'' + b h_i' ] dmu with a, b the main pair.
double apply_measure_generator(const CylindricalFunction& F, const GridDensity1D& mu, const CoefficientSet& c,
                               double t);
double apply_measure_generator(const CylindricalFunction& F, const MeasureView& mu, const CoefficientSet& c, double t);

//! F(mu) [1/2 a_bar h0''(x) + b_bar h0'(x)] + h0(x) L F(mu).
double apply_lifted_generator(const LiftedTestFunction& G, double x, const GridDensity1D& mu, const CoefficientSet& c,
                              double t);
double apply_lifted_generator(const LiftedTestFunction& G, std::span<const double> x, const MeasureView& mu,
                              const CoefficientSet& c, double t);

//! Frozen Kolmogorov operator 1/2 a_bar : grad^2 h + b_bar . grad h at x.
double frozen_generator(const TestFunction& h, std::span<const double> x, const MeasureView& mu,
                        const CoefficientSet& c, double t);

//! P_{s,t}(x, zeta; .) = nu^{zeta, delta_x}_{s,t} x delta_{mu^zeta_{s,t}}.
MarkovKernelState kernel_evaluate(double x, const GridDensity1D& zeta, double s, double t, const CoefficientSet& c,
                                  KernelBackend backend, const KernelConfig& cfg = {});
//! Same with the flow of zeta already computed (it must start at zeta and cover [s, t]).
MarkovKernelState kernel_evaluate(double x, const DensityPath& flow, double s, double t, const CoefficientSet& c,
                                  KernelBackend backend, const KernelConfig& cfg = {});

struct CkReport
{
  double direct = 0.0;   //!< int G dP_{s,t}(x, zeta)
  double composed = 0.0; //!< int int G dP_{r,t}(y, mu) dP_{s,r}(x, zeta; dy, dmu)
  double residual = 0.0; //!< |direct - composed|
  std::size_t nodes = 0; //!< kernel solves used for the middle integral
  bool exact_quadrature = false;
  double mollifier_width = 0.0;
};

//! Chapman-Kolmogorov residual. The middle integral seeds one kernel per cell
//! of nu_{s,r} when quad_points covers every cell with mass, otherwise one per
//! equal-mass stratum at the stratum barycentre. The flow from r is restarted
//! from mu_{s,r}.
CkReport chapman_kolmogorov_residual(double x, const GridDensity1D& zeta, double s, double r, double t,
                                     const CoefficientSet& c, const LiftedTestFunction& G, std::size_t quad_points,
                                     const KernelConfig& cfg = {});

struct ItoPoint
{
  double t = 0.0;
  double lhs = 0.0;    //!< central difference of t -> E f(X_t, mu_t)
  double rhs = 0.0;    //!< E tilde-L_t f(X_t, mu_t)
  double stderr = 0.0; //!< standard error of lhs - rhs: replica spread plus the mu cloud (delta method)
  double residual() const { return lhs - rhs; }
};

struct ItoConfig
{
  SimConfig sim;
  std::vector<double> checkpoints; //!< interior times; empty picks 5 evenly spaced
  double fd_step = 0.05;
};

//! d/dt E f(X_t, mu_t) against E tilde-L_t f(X_t, mu_t) along a coupled
//! particle run from (delta_{x0}, mu0).
std::vector<ItoPoint> lifted_ito_consistency(const LiftedTestFunction& f, std::span<const double> x0,
                                             const EmpiricalMeasure& mu0, const CoefficientSet& c, double horizon,
                                             const ItoConfig& cfg);

struct GeneratorPoint
{
  double t = 0.0;
  double lhs = 0.0; //!< central difference of F(mu_t)
  double rhs = 0.0; //!< L_t F(mu_t)
};

//! d/dt F(mu_t) against L_t F(mu_t) at interior stored times of an FPE path
//! (neighbouring stored states give the central difference).
std::vector<GeneratorPoint> measure_generator_consistency(const CylindricalFunction& F, const DensityPath& path,
                                                          const CoefficientSet& c, std::size_t stride = 1);

//! Lambda_t(G) - Lambda_s(G) - int_s^t Lambda_r(tilde-L_r G) dr for
//! Lambda = nu x delta_mu, trapezoidal in time; nu_path and mu_path share times.
std::vector<double> product_weak_residual(const DensityPath& nu_path, const DensityPath& mu_path,
                                          const CoefficientSet& c, const LiftedTestFunction& G);

} // namespace mkv
