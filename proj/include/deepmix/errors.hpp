#pragma once

#include <stdexcept>
#include <string>

namespace deepmix {

/// Operand shapes do not agree.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the documented domain (empty reductions, bad fractions, ...).
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed file contents (bad magic number, truncated payload, ...).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Two inputs that must describe the same thing disagree.
struct ConsistencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Requested computation exceeds a hard enumeration bound.
struct CapacityError : std::length_error {
  using std::length_error::length_error;
};

/// Non-finite values or training divergence.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace deepmix
