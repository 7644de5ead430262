#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace riskpia {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// exprcore
class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t position, const std::string& expected, const std::string& found);
  std::size_t position() const noexcept { return position_; }
  const std::string& expected() const noexcept { return expected_; }

 private:
  std::size_t position_;
  std::string expected_;
};

class UnknownVariable : public Error {
 public:
  explicit UnknownVariable(const std::string& name)
      : Error("unknown variable '" + name + "'"), name_(name) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Raised when an expression is evaluated outside its domain (log of a
/// non-positive value, division by zero, overflow to a non-finite value).
class DomainError : public Error {
 public:
  using Error::Error;
};

// model / runner configuration
class ConfigError : public Error {
 public:
  using Error::Error;
};

class InvalidDimension : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class EmptyControlSet : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// lattice
class NonIntegerRatio : public Error {
 public:
  using Error::Error;
};

class UnsupportedDimension : public Error {
 public:
  using Error::Error;
};

// perron
class NonConvergence : public Error {
 public:
  NonConvergence(std::size_t iterations, double last_gap);
  std::size_t iterations() const noexcept { return iterations_; }
  double last_gap() const noexcept { return last_gap_; }

 private:
  std::size_t iterations_;
  double last_gap_;
};

class StructureError : public Error {
 public:
  using Error::Error;
};

class NonPositiveVector : public Error {
 public:
  using Error::Error;
};

// howard
class GuardFailed : public Error {
 public:
  GuardFailed(double lambda0, double boundary_proxy);
  double lambda0() const noexcept { return lambda0_; }
  double boundary_proxy() const noexcept { return proxy_; }

 private:
  double lambda0_;
  double proxy_;
};

class InvariantViolation : public Error {
 public:
  using Error::Error;
};

// oracle
class TooLarge : public Error {
 public:
  explicit TooLarge(double count);
  double count() const noexcept { return count_; }

 private:
  double count_;
};

}  // namespace riskpia
