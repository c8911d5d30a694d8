#pragma once

#include <string>
#include <vector>

#include "semfuse/gradcheck.hpp"

namespace semfuse::suite {

// The finite-difference settings the suite is pinned to.
GradCheckOptions default_check_options();

struct SuiteOptions {
  std::string term = "all";  // one of suite_terms() or "all"
  bool inject_fault = false;  // adds a check against a deliberately wrong backward rule
  GradCheckOptions check = default_check_options();
  std::size_t size = 16;  // square input extent
  std::uint64_t seed = 11;
};

struct TermReport {
  std::string term;
  std::size_t tensors = 0;
  std::size_t coords = 0;
  double worst_rel_error = 0;
  std::string worst_tensor;
  bool passed = true;
  double seconds = 0;
};

struct SuiteReport {
  std::vector<TermReport> terms;
  bool passed = true;
  double seconds = 0;
};

// Loss terms and network paths covered by the suite, in run order.
const std::vector<std::string>& suite_terms();

// Throws ContractError for an unknown term.
SuiteReport run_gradient_suite(const SuiteOptions& options);

std::string format_report(const SuiteReport& report);

}  // namespace semfuse::suite
