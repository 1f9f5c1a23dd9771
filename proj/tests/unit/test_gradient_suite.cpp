#include <chrono>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "macd/gradient_suite.hpp"

using namespace macd;

TEST(GradientSuite, CoversEveryDifferentiablePiece) {
  std::set<std::string> names;
  for (const auto& c : gradient_cases(0)) names.insert(c.name);
  for (const char* required :
       {"sigma_global", "nce.y_given_x", "nce.x_given_y", "global_nce", "word_patch_attention",
        "local_contexts", "sigma_local_score", "local_nce", "anchor_loss.teacher-target",
        "anchor_loss.student-outer", "total_loss.features", "total_loss.encoder_params"})
    EXPECT_TRUE(names.contains(required)) << required;
}

TEST(GradientSuite, ShapesRespectLimits) {
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    for (const auto& c : gradient_cases(seed)) {
      ASSERT_FALSE(c.inputs.empty()) << c.name;
      EXPECT_TRUE(std::isfinite(c.fn.value(c.inputs))) << c.name << " seed " << seed;
    }
}

TEST(GradientSuite, PinnedSuitePassesWithinAMinute) {
  const auto start = std::chrono::steady_clock::now();
  const GradSuiteResult r = run_gradient_suite();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_TRUE(r.passed) << "max rel error " << r.max_rel_error;
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_EQ(r.entries.size(), 20 * gradient_cases(0).size());
  EXPECT_LT(seconds, 60.0);
}

TEST(GradientSuite, DetectsBrokenGradient) {
  std::vector<GradCase> cases = gradient_cases(1);
  GradCase& c = cases.front();
  const auto good = c.fn.gradient;
  c.fn.gradient = [good](const std::vector<Vector>& x) {
    auto g = good(x);
    g[0][0] += 0.5;
    return g;
  };
  EXPECT_FALSE(grad_check(c.fn, c.inputs).passed);
}
