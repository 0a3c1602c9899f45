#pragma once

#include <stdexcept>
#include <string>

namespace posmed {

// Malformed or missing input data: unreadable files, schema mismatches,
// invalid records. The CLI maps these to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not agree with an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace posmed
