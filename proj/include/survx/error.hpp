#pragma once

#include <stdexcept>
#include <string>

namespace survx {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent user input (files, configuration, arguments).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Invalid model configuration, e.g. degenerate knots.
class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

/// Non-finite or otherwise unusable numerical result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Posterior computation did not succeed.
class FitError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace survx
