#pragma once

#include <string>
#include <vector>

namespace mgtraj::nn {

struct GradCaseResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Finite-difference checks for every tape primitive (tolerance 1e-6) and for
// the composite discriminator/classifier/generator/PM losses on a small model
// (tolerance 1e-4, sampled coordinates).
std::vector<GradCaseResult> run_gradient_suite(std::uint64_t seed = 42);

bool all_passed(const std::vector<GradCaseResult>& results);

}  // namespace mgtraj::nn
