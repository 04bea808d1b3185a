#pragma once

#include <stdexcept>
#include <string>

namespace andi {

// Base of every error raised by the library. The CLI maps `ValidationError`
// and its subclasses to exit code 2 and everything else to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input detected before any work is done.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NormalizationError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

// Input has no spread (constant map); callers usually fall back to an empty mask.
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class PlacementError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Results that should agree do not (e.g. thread counts produce different maps).
class CorrectnessError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename E = InvalidArgument>
inline void require(bool cond, const std::string& what) {
  if (!cond) throw E(what);
}

}  // namespace detail
}  // namespace andi
