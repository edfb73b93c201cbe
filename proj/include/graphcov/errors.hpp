#pragma once

#include <stdexcept>
#include <string>

namespace graphcov {

/// Input that violates a documented precondition (bad shape, bad parameter,
/// malformed file). The CLI maps this to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// A numerical procedure could not complete (non-PD matrix, singular
/// information, failed factorization). The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace detail
}  // namespace graphcov
