#pragma once

#include <stdexcept>
#include <string>

namespace siflow {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of a formula (t outside [0,1],
// vanishing denominators, non-positive curvature constants).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Invalid construction parameters (kappa == 1 for variance matching, n == 0, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Requested time lies where a quadrature or estimator backend cannot be
// evaluated without dividing by a vanishing alpha_t.
class TimeClampError : public Error {
 public:
  using Error::Error;
};

class ScheduleError : public Error {
 public:
  using Error::Error;
};

class UnsupportedCaseError : public Error {
 public:
  using Error::Error;
};

class SamplerError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int step) : Error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace siflow
