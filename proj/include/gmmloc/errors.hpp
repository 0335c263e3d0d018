#pragma once

#include <stdexcept>
#include <string>

namespace gmmloc {

// Bad user input: malformed files, inconsistent sizes, impossible requests.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent configuration (intrinsics vs raster size, bad keys).
class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

// Numerical breakdown: non-SPD covariance, NaN loss.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gmmloc
