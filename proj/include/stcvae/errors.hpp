#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stcvae {

/// Operand shapes do not satisfy an op's shape rule.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an op (log of a non-positive value, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A covariance (sub)matrix failed Cholesky factorization even after jitter.
class SingularMatrixError : public std::runtime_error {
 public:
  SingularMatrixError(const std::string& what, std::size_t pivot)
      : std::runtime_error(what), pivot_(pivot) {}

  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

/// Malformed byte stream (IDX, checkpoint, CSV).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Byte stream shorter than its header promises.
class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Bad sweep configuration (unknown key, empty list, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace stcvae
