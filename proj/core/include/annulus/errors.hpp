#pragma once

#include <stdexcept>
#include <string>

namespace annulus {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration values (dimensions, rates, group counts, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A landmark annotation that cannot be turned into targets.
class AnnotationError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or version-mismatched file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Shapes or sizes that disagree between two operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values in a loss or gradient. `term()` names the offender.
class NumericError : public Error {
 public:
  NumericError(std::string term, const std::string& what)
      : Error(what), term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

/// A metric that has no valid inputs (no comparable landmarks, single-class ROC, ...).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Degenerate geometry, e.g. coincident landmarks when a normal is needed.
class DegenerateNormalError : public UndefinedMetricError {
 public:
  using UndefinedMetricError::UndefinedMetricError;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

/// A batch with no annotated frames and no consistency weight has nothing to optimize.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace annulus
