#pragma once

#include <stdexcept>
#include <string>

namespace cxr {

// Error taxonomy shared with the CLI exit-code contract:
// DataError -> exit 2, NumericError -> exit 3. Plain std::invalid_argument
// (contract violations at API boundaries) is also mapped to exit 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cxr
