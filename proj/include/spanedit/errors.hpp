#pragma once

#include <stdexcept>
#include <string>

namespace spanedit {

// Exit codes used by the command line tool. Each error class maps to one.
enum class ExitCode : int {
  ok = 0,
  usage = 1,
  io = 2,
  validation = 3,
  divergence = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::validation; }
};

class UsageError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::usage; }
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::io; }
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed record in a line-oriented file. Carries the 1-based line number.
class ParseError : public ValidationError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Numerical failure: non-finite loss, softmax over an axis with no valid entry.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
  ExitCode exit_code() const noexcept override { return ExitCode::divergence; }
};

}  // namespace spanedit
