#pragma once

#include <stdexcept>
#include <string>

namespace crl {

/// Base of every error raised by the toolkit. Each subclass maps to one
/// process exit code in the command-line tool.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or hyperparameter values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Corrupt, truncated or version-mismatched files; too-small benchmarks.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf in losses, gradients or parameters.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Evaluation protocol violated (e.g. a verification fold lacking a class).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace crl
