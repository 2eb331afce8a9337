#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "icc/report.hpp"

namespace icc::cli {

// Runs one command line (args excludes the program name) and returns the exit
// code: 0 success, 2 precondition or identification gate, 3 numerical failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Discrete property suite behind `icc oracle-verify`.
struct OracleSuiteResult {
  int models = 0;
  int skipped = 0;  // draws rejected by the completeness or identification gate
  double sufficiency_tv = 0, proxy_transfer_tv = 0, bridge_error = 0, deviation_residual = 0;
  double theta_error = 0, decomposition_gap = 0, double_robust_error = 0;
  double orthogonal_derivative = 0, negative_control_min = 0;
  int bound_violations = 0;
  bool passed() const;
};
OracleSuiteResult oracle_suite(int models, std::uint64_t seed);
json to_json(const OracleSuiteResult& r);

}  // namespace icc::cli
