#pragma once

#include <stdexcept>
#include <string>

namespace skelattack {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad caller-supplied data: out-of-bounds coordinates, dimension
/// mismatches, malformed files.
class InputError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. querying an optimizer before it has history.
class UsageError : public Error {
 public:
  using Error::Error;
};

class EmptySearchSpace : public Error {
 public:
  using Error::Error;
};

class BudgetExhausted : public Error {
 public:
  using Error::Error;
};

class OracleUnavailable : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace skelattack
