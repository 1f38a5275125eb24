#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace c2fnas {

// Base for everything the library throws. `exit_code()` maps to the CLI contract.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

// The requested space has no members (more transitions than cells).
class EmptySpaceError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class ValidationError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

// Vector lengths disagree (code vs spec, code vs code, ops vs cells).
class LengthMismatch : public ValidationError {
 public:
  LengthMismatch(const std::string& what, std::size_t expected, std::size_t actual)
      : ValidationError(what + ": expected length " + std::to_string(expected) + ", got " +
                        std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Scheduler misuse: completing an unknown or already-completed topology, bad journal.
class ProtocolError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

// Anything that went wrong while an evaluator produced a result. `payload()` keeps the
// raw bytes received (if any) for diagnosis.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, std::string payload = {})
      : Error(what), payload_(std::move(payload)) {}
  int exit_code() const noexcept override { return 3; }
  const std::string& payload() const noexcept { return payload_; }

 private:
  std::string payload_;
};

class TimeoutError : public EvaluationError {
 public:
  using EvaluationError::EvaluationError;
};

class MalformedResponseError : public EvaluationError {
 public:
  using EvaluationError::EvaluationError;
};

class IdMismatchError : public EvaluationError {
 public:
  IdMismatchError(long long expected, long long received, std::string payload)
      : EvaluationError("response id mismatch: expected " + std::to_string(expected) +
                            ", received " + std::to_string(received),
                        std::move(payload)),
        expected_(expected),
        received_(received) {}
  long long expected() const noexcept { return expected_; }
  long long received() const noexcept { return received_; }

 private:
  long long expected_;
  long long received_;
};

class ScoreRangeError : public EvaluationError {
 public:
  using EvaluationError::EvaluationError;
};

class ChildExitedError : public EvaluationError {
 public:
  using EvaluationError::EvaluationError;
};

// Raised when a multi-request session (supernet training) dies part way through.
class SessionError : public EvaluationError {
 public:
  SessionError(const std::string& what, std::string session, std::size_t completed,
               std::string payload = {})
      : EvaluationError(what + " (session " + session + ", " + std::to_string(completed) +
                            " requests completed)",
                        std::move(payload)),
        session_(std::move(session)),
        completed_(completed) {}
  const std::string& session() const noexcept { return session_; }
  std::size_t completed() const noexcept { return completed_; }

 private:
  std::string session_;
  std::size_t completed_;
};

}  // namespace c2fnas
