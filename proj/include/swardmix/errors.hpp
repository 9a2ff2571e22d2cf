#pragma once

#include <stdexcept>
#include <string>

namespace swardmix {

/// Operand shapes do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN or Inf appeared while finite checking was enabled.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The three error families below map onto the CLI exit codes 2, 3 and 4.

/// Bad or unreadable input: missing files, malformed CSV, undecodable images.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint or architecture mismatch.
class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A filter selected no records.
class EmptySelectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace swardmix
