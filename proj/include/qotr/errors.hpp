#pragma once

#include <stdexcept>
#include <string>

namespace qotr {

// Shapes that cannot be combined.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN / Inf where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke an API contract (e.g. backward on a non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid GridSpec / model / training configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qotr
