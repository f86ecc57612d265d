#pragma once

#include <stdexcept>
#include <string>

namespace stabkit {

// Base class for everything this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments, mismatched shapes, configs that cannot be honored.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Numerical failure: singular matrices, degenerate fits, non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Filesystem and serialization problems, including corrupt checkpoints.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace stabkit
