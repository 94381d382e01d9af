#pragma once

#include <stdexcept>
#include <string>

namespace attnscope {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents (bad NPY magic, dtype, truncated data, bad manifest).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// The filesystem refused a read or write.
class PersistenceError : public Error {
 public:
  using Error::Error;
};

/// Data violates a documented invariant (non-finite values, non-stochastic rows, shape vs. config).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Input for which the operation is undefined, e.g. a zero-variance row under layer norm.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class InvalidPatternError : public Error {
 public:
  using Error::Error;
};

}  // namespace attnscope
