#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vicpass {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidDimension : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class DecompositionFailure : public Error {
 public:
  using Error::Error;
};

// Thrown when a regression window cannot determine the stiffness (rank(X) < N).
class DegenerateWindow : public Error {
 public:
  DegenerateWindow(const std::string& what, std::size_t index)
      : Error(what + " (window " + std::to_string(index) + ")"), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class EstimationFailure : public Error {
 public:
  using Error::Error;
};

// Projected-gradient objective kept increasing.
class StepSizeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double t)
      : Error(what + " at t=" + std::to_string(t)), time_(t) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace vicpass
