#pragma once

#include <stdexcept>
#include <string>

namespace stssl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file (bad length, unparsable JSON sidecar, ...).
class FormatError : public Error {
 public:
  using Error::Error;
};

class EmptyFrameError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class InsufficientPointsError : public Error {
 public:
  using Error::Error;
};

// Non-finite activation or zero-norm feature where a direction is required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Cross-references between artifacts do not line up.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

}  // namespace stssl
