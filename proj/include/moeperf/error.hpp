#pragma once

#include <stdexcept>
#include <string>

namespace moeperf {

// Raised for any bound, schema or consistency violation in user-supplied
// configuration. The CLI maps it to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace moeperf
