#pragma once

#include <stdexcept>
#include <string>

namespace tforce {

/// Base of every exception thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector/matrix dimensions do not match what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input data is invalid or too small for the requested operation.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing configuration, unknown option values, missing files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure (rank deficiency, divergence, non-finite state).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace tforce
