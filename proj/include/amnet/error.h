#pragma once

#include <stdexcept>
#include <string>

namespace amnet {

// Raised when a caller breaks an operation's preconditions (shapes, ranges,
// malformed configuration or files).
class ContractError : public std::invalid_argument {
 public:
  explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

// Raised when a computation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

#define AMNET_REQUIRE(cond, msg)                                  \
  do {                                                            \
    if (!(cond)) throw ::amnet::ContractError(std::string(msg));  \
  } while (0)

}  // namespace amnet
