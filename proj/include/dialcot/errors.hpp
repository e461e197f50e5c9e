#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dialcot {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class NotANumber : public Error {
 public:
  using Error::Error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

/// A dataset record or file that cannot be ingested.
class DataError : public Error {
 public:
  DataError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit DataError(const std::string& what) : Error(what) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class EmptyDecomposition : public Error {
 public:
  using Error::Error;
};

class TurnLimitExceeded : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  TransportError(const std::string& what, bool retryable, int status = 0)
      : Error(what), retryable_(retryable), status_(status) {}

  bool retryable() const { return retryable_; }
  int status() const { return status_; }

 private:
  bool retryable_;
  int status_;
};

class PromptTooLong : public Error {
 public:
  using Error::Error;
};

class ScriptMiss : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, long minibatch = -1)
      : Error(what), minibatch_(minibatch) {}

  /// Index of the failing minibatch inside an update, or -1 when unknown.
  long minibatch() const { return minibatch_; }

 private:
  long minibatch_;
};

class MissingGoldError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Wraps a failure raised while the engine was executing a given dialogue step.
class StepError : public Error {
 public:
  StepError(const std::string& what, std::string role, std::size_t step)
      : Error(what), role_(std::move(role)), step_(step) {}

  const std::string& role() const { return role_; }
  std::size_t step() const { return step_; }

 private:
  std::string role_;
  std::size_t step_;
};

class TrainingAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace dialcot
