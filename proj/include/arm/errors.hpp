#pragma once

#include <stdexcept>
#include <string>

namespace arm {

// Violated precondition of an operation (empty input, non-scalar loss, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Operand shapes do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Index outside the valid range (token id, atom index, lookup row).
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Non-finite value encountered in a forward or backward computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file contents or version mismatch.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File cannot be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unknown configuration key or unparsable configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace arm
