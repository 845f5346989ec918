#pragma once

#include <stdexcept>
#include <string>

namespace cascade {

/// Malformed or inconsistent model/run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (event files, graph files) or a schema mismatch.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure: zero intensity at an observed event, likelihood
/// decrease during EM, unbounded M-step, runaway simulation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Simulation exceeded its event cap (supercritical or near-critical model).
class CapExceeded : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace cascade
