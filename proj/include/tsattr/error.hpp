#pragma once

#include <stdexcept>
#include <string>

namespace tsattr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A forward computation produced NaN or Inf from finite inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration value.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// The attribution method does not apply to this model architecture.
class NotApplicableError : public Error {
 public:
  using Error::Error;
};

/// Training loss became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// The least-squares system behind an attribution is rank deficient.
class SingularSystemError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. `line()` is 1-based, 0 when not line oriented.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace tsattr
