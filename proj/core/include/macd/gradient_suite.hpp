#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "macd/diffcore.hpp"

// Finite-difference verification of every differentiable piece of the objective
// on small random instances.
namespace macd {

struct GradCase {
  std::string name;
  DifferentiableFunction fn;
  std::vector<Vector> inputs;
};

// Random shapes drawn from dim <= 8, L <= 5, M^2 <= 4, N <= 4.
std::vector<GradCase> gradient_cases(std::uint64_t seed);

struct GradSuiteOptions {
  std::size_t instances = 20;
  std::uint64_t base_seed = 0;
  GradCheckOptions check;
};

struct GradSuiteEntry {
  std::string name;
  std::uint64_t seed = 0;
  GradCheckReport report;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

GradSuiteResult run_gradient_suite(const GradSuiteOptions& options = {});

}  // namespace macd
