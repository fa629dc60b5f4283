#pragma once

#include <stdexcept>
#include <string>

namespace sharpen_focus {

// Base for every error the library throws. The CLI maps subclasses onto exit
// codes: ConfigError -> 1, DataError -> 2, NumericalError -> 3, anything else -> 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

// Raised when a backward pass with create_graph reaches an op whose
// derivative rule is not itself differentiable.
class UnsupportedOpError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace sharpen_focus
