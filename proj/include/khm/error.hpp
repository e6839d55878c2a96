#pragma once

#include <stdexcept>
#include <string>

namespace khm {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: malformed files, violated preconditions, inconsistent
/// dimensions. The CLI maps these to exit status 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A computation could not be completed (non-PD matrix, failed fit, ...).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace khm
