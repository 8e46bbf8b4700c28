#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lata {

// Base of every error this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Carries the dotted key path of the offending value, e.g. "grading.anonymize".
class ValidationError : public Error {
 public:
  ValidationError(std::string key, const std::string& message)
      : Error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class UnknownKeyError : public ValidationError {
 public:
  explicit UnknownKeyError(const std::string& key)
      : ValidationError(key, "unknown configuration key") {}
};

class DuplicateIdError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class MissingMetadataError : public Error {
 public:
  using Error::Error;
};

class EmptyExportError : public Error {
 public:
  using Error::Error;
};

class IdentityLeakError : public Error {
 public:
  IdentityLeakError(std::string field, const std::string& message)
      : Error(message), field_(std::move(field)) {}
  // Which identity field matched: "sid", "name", "email" or "email_local".
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// The endpoint could not be reached, timed out, or answered with a non-2xx status.
class TransportError : public Error {
 public:
  using Error::Error;
};

class MockMissError : public Error {
 public:
  MockMissError(std::string digest, const std::string& message)
      : Error(message), digest_(std::move(digest)) {}
  const std::string& digest() const noexcept { return digest_; }

 private:
  std::string digest_;
};

struct CoercionAttempt {
  std::string raw_text;
  std::string error;  // empty on the accepted attempt
};

class SchemaCoercionError : public Error {
 public:
  SchemaCoercionError(const std::string& message, std::vector<CoercionAttempt> attempts)
      : Error(message), attempts_(std::move(attempts)) {}
  const std::vector<CoercionAttempt>& attempts() const noexcept { return attempts_; }

 private:
  std::vector<CoercionAttempt> attempts_;
};

class MissingOriginalError : public Error {
 public:
  using Error::Error;
};

class CompilerMissingError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public Error {
 public:
  using Error::Error;
};

class CorruptRecordError : public Error {
 public:
  CorruptRecordError(std::size_t line, const std::string& message)
      : Error("line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace lata
