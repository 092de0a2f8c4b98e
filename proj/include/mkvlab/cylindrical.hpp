#pragma once

#include "mkvlab/measure.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mkv {

//! C^2 scalar function on R^d together with its gradient and Hessian.
struct TestFunction
{
  std::size_t dim = 1;
  std::function<double(std::span<const double>)> value;
  std::function<void(std::span<const double>, std::span<double>)> gradient; //!< d entries
  std::function<void(std::span<const double>, std::span<double>)> hessian;  //!< d x d, row-major
  std::string name;

  double operator()(std::span<const double> x) const { return value(x); }
  double operator()(double x) const { return value(std::span<const double>(&x, 1)); }
  double d1(double x) const;
  double d2(double x) const;

  // 1-D building blocks
  static TestFunction constant(double c, std::size_t dim = 1);
  static TestFunction monomial(int power);             //!< x^p
  static TestFunction sine(double freq, double phase = 0.0);
  static TestFunction gaussian_bump(double center, double width);
  static TestFunction from_1d(std::function<double(double)> f, std::function<double(double)> df,
                              std::function<double(double)> d2f, std::string name = "h");
  //! Coordinate projection x -> x_k on R^d.
  static TestFunction coordinate(std::size_t k, std::size_t dim);
  //! |x|^2 on R^d.
  static TestFunction squared_norm(std::size_t dim);
};

//! Outer function f: R^n -> R with gradient.
struct OuterFunction
{
  std::size_t arity = 1;
  std::function<double(std::span<const double>)> value;
  std::function<void(std::span<const double>, std::span<double>)> gradient;
  std::string name;

  static OuterFunction identity();                   //!< f(r) = r
  static OuterFunction square();                     //!< f(r) = r^2
  static OuterFunction linear(std::vector<double> c); //!< f(r) = c . r
  static OuterFunction product(std::size_t n);       //!< f(r) = r_1 ... r_n
  static OuterFunction constant(double c, std::size_t n = 1);
};

//! F(mu) = f(mu(h_1), ..., mu(h_n)).
class CylindricalFunction
{
public:
  CylindricalFunction(std::vector<TestFunction> inner, OuterFunction outer);

  static CylindricalFunction constant(double c, std::size_t dim = 1);
  //! F(mu) = mu(h).
  static CylindricalFunction linear(TestFunction h);
  //! F(mu) = mean of coordinate k.
  static CylindricalFunction mean(std::size_t k = 0, std::size_t dim = 1);

  std::size_t arity() const { return inner_.size(); }
  std::size_t dim() const { return inner_.front().dim; }
  const std::vector<TestFunction>& inner() const { return inner_; }
  const OuterFunction& outer() const { return outer_; }

  std::vector<double> integrals(const EmpiricalMeasure& mu) const;
  std::vector<double> integrals(const GridDensity1D& rho) const;
  double operator()(const EmpiricalMeasure& mu) const;
  double operator()(const GridDensity1D& rho) const;
  //! df/dr_i evaluated at (mu(h_1), ..., mu(h_n)).
  std::vector<double> outer_gradient(const EmpiricalMeasure& mu) const;

private:
  std::vector<TestFunction> inner_;
  OuterFunction outer_;
};

//! grad^P F(mu) = sum_i d_i f(mu(h_1..h_n)) grad h_i, returned as a closed-form field.
VectorField intrinsic_gradient(const CylindricalFunction& F, const EmpiricalMeasure& mu);

//! <grad^P F(mu), phi>_{L^2(mu)}.
double gradient_pairing(const CylindricalFunction& F, const EmpiricalMeasure& mu, const VectorField& phi);

//! Random 1-D cylindrical function: 1 to 3 inner functions drawn from sines,
//! Gaussian bumps and cubics, with a linear, product or squared outer function.
CylindricalFunction random_cylindrical(std::uint64_t seed);
//! Random smooth 1-D direction field a + b x + c sin(k x).
VectorField random_direction(std::uint64_t seed);

struct GradientStudy
{
  double pairing = 0.0;
  std::vector<double> eps;
  std::vector<double> central_error; //!< |central FD - pairing| per eps
  double observed_order = 0.0;       //!< log2 slope over the eps ladder; +inf when the FD is exact
  double rel_error_fine = 0.0;       //!< central FD relative error at fine_eps
  double fine_eps = 1e-5;
};

//! Central differences of F along mu o (Id + eps phi)^{-1} on the ladder
//! eps_0, eps_0/2, ... (`levels` steps) against the closed-form pairing.
GradientStudy gradient_fd_study(const CylindricalFunction& F, const EmpiricalMeasure& mu, const VectorField& phi,
                                double eps0 = 4e-2, int levels = 3, double fine_eps = 1e-5);

} // namespace mkv
