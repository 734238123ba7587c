#pragma once

// Central finite-difference gradient checks over randomly drawn networks,
// exposed for the `gradcheck` CLI verb.

#include <string>
#include <vector>

#include "spa/common.hpp"

namespace spa::gradcheck {

struct CheckResult {
  std::string name;
  int configurations = 0;
  long parameters_checked = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct SuiteOptions {
  int configurations = 64;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Parameters sampled per configuration (all biases are always checked).
  int weights_per_configuration = 96;
  std::uint64_t seed = 1;
};

// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

// Policy (F, 32, A) and value (F, 64, 64, 1) networks under both
// activations, plus both progress-estimator modes through the summed
// trajectory loss.
std::vector<CheckResult> run_suite(const SuiteOptions& options);

}  // namespace spa::gradcheck
