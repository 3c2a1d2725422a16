#pragma once

#include <stdexcept>
#include <string>

namespace tfbest {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (CSV rows, manifests, datasets).
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigMismatchError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values or other numerical breakdown.
class NumericError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace tfbest
