#pragma once

#include <stdexcept>
#include <string>

namespace clipgeom {

// Base of every error thrown by the library. The CLI maps the subclasses to
// exit codes: InvalidArgument -> 2, IoError/FormatError -> 3, NumericError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated precondition on an argument (shape, range, enum value).
struct InvalidArgument : Error {
  using Error::Error;
};

// File could not be opened, read or written.
struct IoError : Error {
  using Error::Error;
};

// File content does not conform to its declared format.
struct FormatError : Error {
  using Error::Error;
};

// A computation hit a numerically undefined case (zero norm, singular matrix,
// non-finite intermediate).
struct NumericError : Error {
  using Error::Error;
};

namespace detail {

template <typename E = InvalidArgument>
inline void require(bool cond, const std::string& what) {
  if (!cond) throw E(what);
}

}  // namespace detail

}  // namespace clipgeom
