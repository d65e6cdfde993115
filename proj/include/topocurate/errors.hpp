#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace topocurate {

// Everything deriving from ValidationError is a problem with user-supplied
// input or configuration and maps to CLI exit code 2. Other exceptions are
// internal errors (exit code 1).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : ValidationError {
  using ValidationError::ValidationError;
};

// Malformed record or file. `line` is 1-based; 0 means "not line-addressable"
// (e.g. a whole-document JSON file).
struct SchemaError : ValidationError {
  SchemaError(std::size_t line_no, const std::string& what)
      : ValidationError(line_no ? "line " + std::to_string(line_no) + ": " + what : what),
        line(line_no) {}
  std::size_t line;
};

struct DimensionError : ValidationError {
  using ValidationError::ValidationError;
};

struct DuplicateIdError : ValidationError {
  using ValidationError::ValidationError;
};

struct UnknownTaskError : ValidationError {
  using ValidationError::ValidationError;
};

struct UnknownTrajectoryError : ValidationError {
  using ValidationError::ValidationError;
};

struct EmptyTaskError : ValidationError {
  using ValidationError::ValidationError;
};

struct ZeroVectorError : ValidationError {
  using ValidationError::ValidationError;
};

struct UnvisitedNodeError : ValidationError {
  using ValidationError::ValidationError;
};

struct InsufficientPoolError : ValidationError {
  using ValidationError::ValidationError;
};

// Invalid knob combination (thresholds out of range, zero weights, ...).
struct ConfigError : ValidationError {
  using ValidationError::ValidationError;
};

// A planted-corpus recipe that cannot be realized with exact ground truth.
struct SpecError : ValidationError {
  using ValidationError::ValidationError;
};

}  // namespace topocurate
