#pragma once

#include <stdexcept>
#include <string>

namespace finre {

/// Root of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data, config or artifact. The CLI maps these to exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& field,
             const std::string& what)
      : DataError(source + ":" + std::to_string(line) + ": field '" + field + "': " + what),
        line_(line),
        field_(field) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class SpanOutOfBounds : public DataError {
 public:
  using DataError::DataError;
};

class DuplicateId : public DataError {
 public:
  using DataError::DataError;
};

class UnknownTypePair : public DataError {
 public:
  using DataError::DataError;
};

class DimensionMismatch : public DataError {
 public:
  using DataError::DataError;
};

class ZeroVector : public DataError {
 public:
  using DataError::DataError;
};

class InsufficientCandidates : public DataError {
 public:
  using DataError::DataError;
};

class EmptyTestSet : public DataError {
 public:
  using DataError::DataError;
};

class SplitMismatch : public DataError {
 public:
  using DataError::DataError;
};

class MissingArtifact : public DataError {
 public:
  explicit MissingArtifact(const std::string& path)
      : DataError("missing artifact: " + path), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class ConfigError : public DataError {
 public:
  using DataError::DataError;
};

/// Bad command line: unknown override key, missing config file. Exit code 1.
class UsageError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class InvalidArgument : public DataError {
 public:
  using DataError::DataError;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

/// Anything that went wrong talking to a provider. The CLI maps these to exit code 3.
class ProviderError : public Error {
 public:
  using Error::Error;
};

/// Network/HTTP failure. Retryable.
class TransportError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

/// The provider answered but declined the request. Not retried.
class ProviderRefusal : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class CapabilityUnsupported : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class FailureThresholdExceeded : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

}  // namespace finre
