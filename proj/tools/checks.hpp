#pragma once

#include <functional>
#include <string>
#include <vector>

namespace ihf::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// Each check measures its own runtime and compares it to `limit_s`.
CheckResult blending(double limit_s = 1.0);
CheckResult ibs_equivalence(double limit_s = 5.0);
CheckResult sphere_fit(double limit_s = 60.0);
CheckResult hocp_properties(double limit_s = 5.0);
CheckResult metric_exactness(double limit_s = 1.0);
// Extra oracles run by selftest only.
CheckResult aggregation_scan();
CheckResult diameter_brute_force();

// Runs `body`, which fills passed/detail, and times it.
CheckResult timed(const std::string& name, double limit_s, const std::function<void(CheckResult&)>& body);

std::string format_line(const std::string& label, const CheckResult& r);

}  // namespace ihf::checks
