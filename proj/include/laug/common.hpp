#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace laug {

using Shape = std::vector<std::int64_t>;

// Error taxonomy. Shape/Value errors map to CLI exit 2, NumericalAbort to 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ValueError : Error {
  using Error::Error;
};
struct NumericalAbort : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct FormatError : IoError {
  using IoError::IoError;
};

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace laug
