#pragma once

#include <stdexcept>
#include <string>

namespace frailtyscan {

// Bad inputs: files, configs, malformed data. CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures: non-convergence, degenerate fields. CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

class FitError : public NumericalError {
public:
  FitError(const std::string& msg, long window_index = -1)
      : NumericalError(msg), window_index_(window_index) {}
  long window_index() const { return window_index_; }

private:
  long window_index_;
};

class DegenerateFieldError : public NumericalError {
public:
  explicit DegenerateFieldError(const std::string& msg) : NumericalError(msg) {}
};

}  // namespace frailtyscan
