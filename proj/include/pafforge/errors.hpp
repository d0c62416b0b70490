#pragma once

#include <stdexcept>
#include <string>

namespace pafforge {

// Process exit codes used by the CLI.
enum class ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kData = 3,
  kDivergence = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kFailure; }
};

/// Bad configuration, usage, or a reference to something that does not exist.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kConfig; }
};

/// Malformed or inconsistent input data (files, tensors, datasets).
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kData; }
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : DataError(what + " (line " + std::to_string(line) + ", column " +
                  std::to_string(column) + ")"),
        line_(line),
        column_(column) {}
  explicit ParseError(const std::string& what) : DataError(what) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_ = 0;
  std::size_t column_ = 0;
};

class LookupError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericDivergence : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kDivergence; }
};

}  // namespace pafforge
