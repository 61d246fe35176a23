// errors.hpp
// Exception types shared by every module.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace qda {

// Register or table would exceed the simulator's qubit capacity.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Vector or matrix dimensions do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A qubit, basis or particle index is out of range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// A precondition on an argument value was violated.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Model integration produced a non-finite state.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration failed validation. Carries every violation found.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<std::string> violations);

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

}  // namespace qda
