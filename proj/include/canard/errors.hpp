#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace canard {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  ok = 0,
  config_error = 2,
  numerical_failure = 3,
  incomplete_result = 4,
};

/// Base class for all errors raised by the library. Each error knows the
/// exit code the CLI should report for it.
class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& kind, const std::string& message)
      : std::runtime_error(message), code_(code), kind_(kind) {}

  ExitCode code() const noexcept { return code_; }
  const std::string& kind() const noexcept { return kind_; }

 private:
  ExitCode code_;
  std::string kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message)
      : Error(ExitCode::config_error, "config", message) {}
  ConfigError(const std::string& kind, const std::string& message)
      : Error(ExitCode::config_error, kind, message) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& message)
      : Error(ExitCode::numerical_failure, "numerical", message) {}
  NumericalError(const std::string& kind, const std::string& message)
      : Error(ExitCode::numerical_failure, kind, message) {}
};

class IncompleteResult : public Error {
 public:
  explicit IncompleteResult(const std::string& message)
      : Error(ExitCode::incomplete_result, "incomplete", message) {}
};

/// Syntax error in a kinetics expression.
class ParseError : public ConfigError {
 public:
  ParseError(std::size_t offset, std::string expected, std::string found,
             const std::string& context = "");

  std::size_t offset() const noexcept { return offset_; }
  const std::string& expected() const noexcept { return expected_; }
  const std::string& found() const noexcept { return found_; }

 private:
  std::size_t offset_;
  std::string expected_;
  std::string found_;
};

/// Evaluation outside the domain of an operation (log of a non-positive
/// number, division by zero, non-finite result).
class DomainError : public NumericalError {
 public:
  explicit DomainError(const std::string& message)
      : NumericalError("domain", message) {}
};

/// Non-finite right-hand side or a gate variable outside [0, 1].
class PoisonError : public NumericalError {
 public:
  PoisonError(std::string term, const std::string& message)
      : NumericalError("poison", message), term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace canard
