#pragma once

#include <stdexcept>
#include <string>

namespace fmital {

/// Root of the library's exception hierarchy. The CLI maps the concrete
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments or configuration (exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Extents of two operands do not agree.
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

/// NaN/Inf escaped a computation (exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace fmital
