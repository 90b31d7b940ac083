#pragma once

#include <string>
#include <vector>

namespace ssmic {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Fast oracle checks across the modules (a few seconds in total).
std::vector<CheckResult> run_selftest();

}  // namespace ssmic
