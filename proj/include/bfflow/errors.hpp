#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace bfflow {

/// Base class for runtime failures of the solvers (exit code 2 in the CLI).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative solver (CG or Newton) ran out of iterations.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> history)
      : Error(what), history_(std::move(history)) {}

  const std::vector<double>& residual_history() const { return history_; }
  double last_residual() const { return history_.empty() ? 0.0 : history_.back(); }

 private:
  std::vector<double> history_;
};

/// A time stepper produced NaN or Inf.
class BlowUpError : public Error {
 public:
  BlowUpError(const std::string& what, std::size_t step) : Error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Configuration text could not be parsed or violates a physical invariant.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace bfflow
