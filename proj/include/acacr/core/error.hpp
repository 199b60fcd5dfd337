#pragma once

#include <stdexcept>
#include <string>

namespace acacr {

// Every failure raised by the library derives from Error so callers can map
// categories to exit codes without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Training loss became non-finite.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A checkpoint or input that is well formed but does not fit the network.
class IncompatibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace acacr
