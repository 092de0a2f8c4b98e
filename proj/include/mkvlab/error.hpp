#pragma once

#include <stdexcept>
#include <string>

namespace mkv {

//! Base class for all errors raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! An iterative method stopped before reaching its tolerance.
class ConvergenceError : public Error
{
public:
  ConvergenceError(const std::string& what, double residual)
    : Error(what + " (residual " + std::to_string(residual) + ")")
    , residual_(residual)
  {}
  double residual() const { return residual_; }

private:
  double residual_;
};

//! Explicit time step exceeds the stability bound.
class CflError : public Error
{
public:
  using Error::Error;
};

} // namespace mkv
