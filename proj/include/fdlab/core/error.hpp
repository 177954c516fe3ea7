#pragma once

#include <stdexcept>
#include <string>

namespace fdlab {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument, shape mismatch or out-of-range id.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Dataset or image decoding failure; the message names the offending entry.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Requested model (e.g. an auxiliary head for a (tap, class) pair) is absent.
class LookupError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public NumericError {
 public:
  using NumericError::NumericError;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration. The message carries the field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An upstream pipeline artifact is missing.
class DependencyError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ArgumentError(what);
}

}  // namespace fdlab
