#pragma once

#include <stdexcept>
#include <string>

namespace iast {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Tensor file format failures. Each variant is distinct so callers can tell
// a foreign file from a damaged one.
class FormatError : public Error {
 public:
  using Error::Error;
};
class BadMagic : public FormatError {
 public:
  using FormatError::FormatError;
};
class Truncated : public FormatError {
 public:
  using FormatError::FormatError;
};
class UnknownDtype : public FormatError {
 public:
  using FormatError::FormatError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Raised when optimisation produces a non-finite value. Training never
// continues past one of these.
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace iast
