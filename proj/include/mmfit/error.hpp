#pragma once

#include <stdexcept>
#include <string>

namespace mmfit {

/// Thrown for contract violations: bad input shapes, malformed files,
/// non-finite values.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mmfit
