#pragma once

#include <stdexcept>
#include <string>

namespace sparse_lab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Parameters outside the sparse regime (e.g. Np < 1).
class RegimeError : public Error {
 public:
  using Error::Error;
};

/// Problem too large for the requested algorithm.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Operation not defined for the given ensemble kind.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Empty graph, zero-variance statistic and similar degenerate input.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Formal monomial outside the class an operation accepts.
class ClassError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Iterative eigensolver did not reach tolerance; carries the best residual.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double best_residual)
      : Error(what), best_residual_(best_residual) {}
  double best_residual() const noexcept { return best_residual_; }

 private:
  double best_residual_;
};

/// Root continuation lost the Stieltjes branch.
class ContinuationError : public Error {
 public:
  ContinuationError(const std::string& what, double last_re, double last_im)
      : Error(what), last_re_(last_re), last_im_(last_im) {}
  double last_good_re() const noexcept { return last_re_; }
  double last_good_im() const noexcept { return last_im_; }

 private:
  double last_re_;
  double last_im_;
};

/// Polynomial outside the perturbative regime (no spectral edge found).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration or command line.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace sparse_lab
