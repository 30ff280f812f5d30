#ifndef DSBFA_ERROR_HPP
#define DSBFA_ERROR_HPP

#include <stdexcept>
#include <string>

namespace dsbfa {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (bad index, wrong shape, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A numerical routine failed: non-PD matrix, non-finite density, ...
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file failed, or its content is malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace detail
}  // namespace dsbfa

#endif  // DSBFA_ERROR_HPP
