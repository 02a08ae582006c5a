#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kanforget {

/// Caller violated an operation's preconditions (bad shape, bad index, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input outside the mathematical domain of an operation (e.g. non-finite x).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Least-squares fit could not be solved reliably.
class FitError : public std::runtime_error {
 public:
  FitError(const std::string& what, double condition_estimate)
      : std::runtime_error(what), condition_(condition_estimate) {}

  [[nodiscard]] double condition_estimate() const noexcept { return condition_; }

 private:
  double condition_;
};

/// Numerical failure during training. Location fields are -1 when unknown.
class TrainingError : public std::runtime_error {
 public:
  struct Location {
    long task = -1;
    long epoch = -1;
    long index = -1;
  };

  TrainingError(const std::string& what, Location where)
      : std::runtime_error(what), where_(where) {}

  [[nodiscard]] const Location& where() const noexcept { return where_; }

 private:
  Location where_;
};

/// Malformed external file. `field()` names the offending header field.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::string field)
      : std::runtime_error(what), field_(std::move(field)) {}

  [[nodiscard]] const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Dataset does not hold enough material for the requested construction.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A measured quantity broke an inequality that holds by construction.
/// Signals a bug in the measurement code, never bad user input.
class InternalConsistencyError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kanforget
