#pragma once

#include <stdexcept>
#include <string>

namespace cpabaug {

/// Coarse error classes. The CLI maps them onto its exit codes.
enum class ErrorKind { Validation, Io, Numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

struct DimensionMismatch : ValidationError {
  using ValidationError::ValidationError;
};
struct ShapeMismatch : ValidationError {
  using ValidationError::ValidationError;
};
struct DegenerateBasis : ValidationError {
  using ValidationError::ValidationError;
};
struct TooFewPatches : ValidationError {
  using ValidationError::ValidationError;
};
struct BboxOutOfImage : ValidationError {
  using ValidationError::ValidationError;
};
struct NoValidTarget : ValidationError {
  using ValidationError::ValidationError;
};
struct SchemaError : ValidationError {
  using ValidationError::ValidationError;
};

struct NonFiniteResult : NumericError {
  using NumericError::NumericError;
};
struct NonFiniteLoss : NumericError {
  using NumericError::NumericError;
};

}  // namespace cpabaug
