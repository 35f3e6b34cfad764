#pragma once

#include <stdexcept>
#include <string>

namespace steersig {

// Base class for every error raised by the library. The CLI maps the
// concrete subclasses onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller-supplied value violates an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A file or payload does not match its declared format.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Persisted data is inconsistent (unjoinable rows, hash collisions, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Configuration problems detected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// The remote judge could not be reached or kept failing after retries.
class RemoteError : public Error {
 public:
  using Error::Error;
};

}  // namespace steersig
