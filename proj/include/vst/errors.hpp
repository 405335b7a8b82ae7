#pragma once

#include <stdexcept>
#include <string>

namespace vst {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN / +inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Video or token-grid extents that the patch / window / merge schedule cannot tile.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Prediction sets or manifests whose sample ids do not line up.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace vst
