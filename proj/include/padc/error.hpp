#pragma once

#include <stdexcept>
#include <string>

namespace padc {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input document or parameters that violate a type invariant.
class ValidationError : public Error {
public:
  using Error::Error;
};

/// A numerical procedure produced an unusable result (singular system,
/// non-positive recurrence coefficient, rank deficiency, ...).
class NumericalError : public Error {
public:
  using Error::Error;
};

/// An iterative solver hit its iteration cap.
class ConvergenceError : public Error {
public:
  using Error::Error;
};

} // namespace padc
