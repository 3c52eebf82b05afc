#pragma once

#include <stdexcept>
#include <string>

namespace bbdfo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or non-finite input document.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Layer chain, tensor shape or vector length mismatch.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The query budget of a black box has been used up.
class BudgetExhausted : public Error {
 public:
  using Error::Error;
};

/// Interpolation system has no (unique) solution.
class SingularSystem : public Error {
 public:
  using Error::Error;
};

}  // namespace bbdfo
