#pragma once

#include <stdexcept>
#include <string>

namespace daempc {

/// A numerical kernel could not produce a trustworthy result (singular
/// solve, divergence, resonance).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The system's structure is outside what the pipeline supports, or an
/// operation's structural precondition (regularity, index) is violated.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of the inputs do not fit together.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace daempc
