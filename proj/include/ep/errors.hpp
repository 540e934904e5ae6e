#pragma once

#include <stdexcept>
#include <string>

namespace ep {

/// Base class for runtime numerical failures (as opposed to precondition
/// violations, which throw std::invalid_argument).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A symmetric matrix turned out not to be numerically positive definite.
/// Carries the index of the first failing pivot.
class CholeskyError : public NumericalError {
 public:
  CholeskyError(const std::string& what, int pivot)
      : NumericalError(what + " (pivot " + std::to_string(pivot) + ")"), pivot_(pivot) {}
  int pivot() const { return pivot_; }

 private:
  int pivot_;
};

/// A tilted partition function evaluated to zero, so normalized moments
/// do not exist.
class DegeneratePartition : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Adaptive quadrature could not reach the requested tolerance. Carries the
/// best estimate and the achieved error bound.
class QuadratureError : public NumericalError {
 public:
  QuadratureError(const std::string& what, double estimate, double error)
      : NumericalError(what), estimate_(estimate), error_(error) {}
  double estimate() const { return estimate_; }
  double error() const { return error_; }

 private:
  double estimate_;
  double error_;
};

}  // namespace ep
