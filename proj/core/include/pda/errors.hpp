#pragma once

#include <stdexcept>
#include <string>

namespace pda {

// Base of every error raised by the library. The CLI maps each subclass to
// its own process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument to a numeric primitive (non-finite logits, shape mismatch...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Invalid experiment / phase configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite activation, loss or parameter update.
class NumericFailure : public Error {
 public:
  using Error::Error;
};

// Zero-norm vector passed where a direction is required.
class DegenerateVector : public NumericFailure {
 public:
  using NumericFailure::NumericFailure;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed feature or checkpoint file; `line()` is 1-based, 0 when unknown.
class ParseError : public IoError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : IoError(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Evaluation requested on a dataset that carries no hidden labels.
class EvaluationUnavailable : public Error {
 public:
  using Error::Error;
};

}  // namespace pda
