#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace knowrl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

// The run directory cannot be resumed as-is.
class ManifestError : public Error {
 public:
  using Error::Error;
};

class GatewayError : public Error {
 public:
  using Error::Error;
};

// Retries exhausted (or a non-retryable transport failure). Carries one
// line per attempt.
class TransportError : public GatewayError {
 public:
  TransportError(const std::string& what, std::vector<std::string> attempt_log)
      : GatewayError(what), attempts_(std::move(attempt_log)) {}

  const std::vector<std::string>& attempts() const noexcept { return attempts_; }

 private:
  std::vector<std::string> attempts_;
};

// The server answered but the body is not a valid completion payload.
class ProtocolError : public GatewayError {
 public:
  ProtocolError(const std::string& what, std::string excerpt)
      : GatewayError(what + " (payload: " + excerpt + ")"), excerpt_(std::move(excerpt)) {}

  const std::string& excerpt() const noexcept { return excerpt_; }

 private:
  std::string excerpt_;
};

class UnsupportedCapability : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

// Every introspection run of a phase produced zero parseable tasks.
class EmptyGenerationError : public Error {
 public:
  EmptyGenerationError(const std::string& what, std::vector<std::string> raw_outputs)
      : Error(what), raw_(std::move(raw_outputs)) {}

  const std::vector<std::string>& raw_outputs() const noexcept { return raw_; }

 private:
  std::vector<std::string> raw_;
};

}  // namespace knowrl
