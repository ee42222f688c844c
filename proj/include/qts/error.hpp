#ifndef QTS_ERROR_HPP
#define QTS_ERROR_HPP

#include <stdexcept>
#include <string>

namespace qts {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition (bad argument, bad config).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Input data is malformed or violates a data-model invariant. The message
/// carries file/line or set/row context.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Two descriptors or representations of different dimension were combined.
class DimensionMismatch : public Error {
 public:
  DimensionMismatch(long a, long b)
      : Error("dimension mismatch: " + std::to_string(a) + " vs " +
              std::to_string(b)) {}
};

/// A vector's projection onto a subspace is numerically zero.
class DegenerateProjection : public Error {
 public:
  using Error::Error;
};

}  // namespace qts

#endif  // QTS_ERROR_HPP
