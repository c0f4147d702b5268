#pragma once

#include <stdexcept>
#include <string>

namespace gjem {

// Shape or arity disagreement between tensors, specs and models.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid user-facing configuration (maps to CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// File-format or filesystem failure (maps to CLI exit code 4).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sampling produced non-finite states or runaway energies (CLI exit code 3).
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gjem
