#pragma once

#include <stdexcept>
#include <string>

// Error taxonomy. Solvers signal structurally distinct failures with distinct
// types so the command-line front end can map them to its exit codes without
// parsing message strings.

namespace fbee {

// A required operator (shooting matrix, Fredholm system, cost weight R, ...)
// is numerically singular or non-invertible.
struct SingularOperatorError : std::runtime_error {
  explicit SingularOperatorError(const std::string& what)
      : std::runtime_error(what) {}
};

// An iteration failed to converge, or a finite-time blow-up was detected.
struct NonConvergenceError : std::runtime_error {
  explicit NonConvergenceError(const std::string& what)
      : std::runtime_error(what) {}
};

// A problem description (config file, generator parameters, grid sizes) is
// invalid or inconsistent.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fbee
