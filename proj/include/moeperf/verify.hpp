#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace moeperf {

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;  // failure reason, empty on success
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  // When set, the dumped layer is loaded and checked in place of a freshly
  // generated one.
  std::optional<std::filesystem::path> weight_dump;
};

struct VerifyReport {
  std::vector<PropertyResult> results;

  bool all_passed() const;
  std::string summary() const;  // one "PASS name" / "FAIL name: detail" line each
};

/// Property checks over the toy executor and the router, each against an
/// independent brute-force or closed-form reference.
VerifyReport run_property_suite(const VerifyOptions& options = {});

}  // namespace moeperf
