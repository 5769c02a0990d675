#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace stancekit {

// Specific failure kinds. Tests assert on these; the CLI maps categories
// to exit codes.
enum class ErrorKind {
  InvalidConfig,
  UnknownLabel,
  FileMissing,
  MalformedRow,
  IoError,
  ValidationFailed,
  InsufficientInstances,
  MissingGold,
  EmptyExplanation,
  EmptyQapList,
  TooManyQaps,
  QapNotFound,
  InsufficientQaps,
  MissingStyle,
  LengthMismatch,
  AllAbstained,
  CacheCorrupt,
  Timeout,
  HttpStatus,
  MalformedResponse,
  RetriesExhausted,
  MissingApiKey,
  PartialRunAborted,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::UnknownLabel: return "UnknownLabel";
    case ErrorKind::FileMissing: return "FileMissing";
    case ErrorKind::MalformedRow: return "MalformedRow";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::ValidationFailed: return "ValidationFailed";
    case ErrorKind::InsufficientInstances: return "InsufficientInstances";
    case ErrorKind::MissingGold: return "MissingGold";
    case ErrorKind::EmptyExplanation: return "EmptyExplanation";
    case ErrorKind::EmptyQapList: return "EmptyQapList";
    case ErrorKind::TooManyQaps: return "TooManyQaps";
    case ErrorKind::QapNotFound: return "QapNotFound";
    case ErrorKind::InsufficientQaps: return "InsufficientQaps";
    case ErrorKind::MissingStyle: return "MissingStyle";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::AllAbstained: return "AllAbstained";
    case ErrorKind::CacheCorrupt: return "CacheCorrupt";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::HttpStatus: return "HttpStatus";
    case ErrorKind::MalformedResponse: return "MalformedResponse";
    case ErrorKind::RetriesExhausted: return "RetriesExhausted";
    case ErrorKind::MissingApiKey: return "MissingApiKey";
    case ErrorKind::PartialRunAborted: return "PartialRunAborted";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Bad flags, bad config files, invalid parameter combinations. Exit code 1.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Unreadable or malformed datasets, QAP libraries, caches. Exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

// Transport and endpoint failures. Exit code 3.
class BackendError : public Error {
 public:
  using Error::Error;
};

// Raised when backend failures exceed the run's failure budget. Exit code 4.
class PartialRunError : public Error {
 public:
  PartialRunError(std::size_t completed, const std::string& message)
      : Error(ErrorKind::PartialRunAborted, message), completed_(completed) {}

  std::size_t completed() const { return completed_; }

 private:
  std::size_t completed_;
};

inline int exit_code(const Error& e) {
  if (dynamic_cast<const PartialRunError*>(&e)) return 4;
  if (dynamic_cast<const BackendError*>(&e)) return 3;
  if (dynamic_cast<const DataError*>(&e)) return 2;
  return 1;
}

}  // namespace stancekit
