#pragma once

#include <stdexcept>
#include <string>

namespace sequifi {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (manifests, CSV, WAV).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Tensor or dimension mismatch between arguments.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment or strategy configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace sequifi
