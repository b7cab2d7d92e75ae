#pragma once

#include <string>
#include <vector>

namespace dhp::tools {

struct SuiteReport {
  std::string name;
  std::size_t checks = 0;
  std::vector<std::string> failures;
  double seconds = 0.0;

  bool passed() const { return failures.empty() && checks > 0; }
};

/// prox | gradcheck | equivalence | sharing | accounting
const std::vector<std::string>& suite_names();

/// Throws std::invalid_argument for an unknown suite.
SuiteReport run_suite(const std::string& name);

/// Individual suites, also used by the acceptance gate.
SuiteReport verify_prox(std::size_t cases = 100);
SuiteReport verify_gradcheck(std::size_t seeds = 20);
SuiteReport verify_equivalence(std::size_t shapes = 20);
SuiteReport verify_sharing();
SuiteReport verify_accounting();

}  // namespace dhp::tools
