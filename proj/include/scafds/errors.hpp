#pragma once

#include <stdexcept>
#include <string>

namespace scafds {

// Error taxonomy shared by every module. The CLI maps these onto distinct
// process exit codes (see pipeline.hpp); library code throws, never exits.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatches between tensors, malformed graph wiring and similar
// contract breaches detected at call boundaries.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Argument outside its mathematical domain (u == v co-occurrence, index out
// of range, too many features for exact enumeration, ...).
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, diverging losses, failed convergence.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConvergenceError : NumericError {
  explicit ConvergenceError(const std::string& msg) : NumericError(msg) {}
};

// Feasibility violations (marginal sums that cannot be matched, ...).
struct InfeasibleError : NumericError {
  explicit InfeasibleError(const std::string& msg) : NumericError(msg) {}
};

// Operation invoked in the wrong lifecycle order (scoring before training,
// resuming from a checkpoint that does not match the config, ...).
struct StateError : std::runtime_error {
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace scafds
