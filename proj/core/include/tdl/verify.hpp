#pragma once

#include <string>
#include <vector>

// Self-check suites: finite-difference gradient checks, shifted-window
// attention against scalar brute-force references, and metrics against a
// naive set-based reference. All arithmetic runs in 64-bit mode. Suites are
// pure and side-effect free; a failure names the first offending case.

namespace tdl {

struct SuiteResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// The suite names accepted as a filter, in execution order.
std::vector<std::string> verify_suite_names();

// Runs every suite whose name equals `filter`, or all suites when `filter`
// is empty. Throws ConfigError on an unknown filter.
std::vector<SuiteResult> run_verify_suites(const std::string& filter = "");

bool all_suites_passed(const std::vector<SuiteResult>& results);

}  // namespace tdl
