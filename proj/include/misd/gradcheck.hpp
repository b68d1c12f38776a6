#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace misd {

/// Finite-difference check of the prompt gradients on small random problems.
struct GradcheckConfig {
  int trials = 100;
  std::uint64_t seed = 0;
  int embed_dim = 8;
  int token_dim = 6;
  int context_length = 4;
  int num_classes = 5;
  int negative_prompts = 3;
  int batch = 4;
  int views = 4;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error. Central differences carry
  // ~1e-10 of roundoff, so coordinates whose true gradient is (near) zero
  // are compared absolutely below this scale.
  double floor = 1e-6;
  // Test hook: added to one analytic gradient coordinate per trial.
  double perturbation = 0.0;
};

struct GradcheckWorst {
  int trial = -1;
  std::string term;       // ce, neg, orth or total
  std::string parameter;  // e.g. negative_contexts[1][2][0]
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradcheckResult {
  int trials = 0;
  long long coordinates = 0;
  bool passed = false;
  GradcheckWorst worst;
  std::vector<GradcheckWorst> failures;  // first few offending coordinates
};

/// Throws ConfigError on trials < 1 or invalid sizes.
GradcheckResult run_gradcheck(const GradcheckConfig& config);

}  // namespace misd
