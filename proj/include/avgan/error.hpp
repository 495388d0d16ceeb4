#pragma once

#include <stdexcept>
#include <string>

namespace avgan {

/// A caller passed something that violates an operation's precondition
/// (shape, range, count). The message names the offending value.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computed quantity became non-finite (training abort path).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File system, PNG or checkpoint failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace avgan
