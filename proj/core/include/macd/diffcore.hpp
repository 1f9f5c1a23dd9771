#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "macd/dense_matrix.hpp"

namespace macd {

using Vector = std::vector<double>;

// u.v / (|u||v|). Throws DomainError when either norm is zero.
double cosine(std::span<const double> u, std::span<const double> v);

// exp(v_i/tau) / sum_j exp(v_j/tau), evaluated with max subtraction.
Vector softmax_temp(std::span<const double> v, double tau);

// log(sum exp(v_i)). Throws DomainError on an empty input.
double log_sum_exp(std::span<const double> v);

struct GradCheckReport {
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  // One entry per input vector: the worst relative error over its coordinates.
  std::vector<double> per_input_errors;
  bool passed = false;
  std::string diagnostic;
};

// A scalar function of several real vectors together with its analytic gradient.
struct DifferentiableFunction {
  std::function<double(const std::vector<Vector>&)> value;
  std::function<std::vector<Vector>(const std::vector<Vector>&)> gradient;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  double denominator_floor = 1e-8;
};

// Compares the analytic gradient with central differences (f(x+h)-f(x-h))/2h,
// coordinate by coordinate. Relative error uses max(|analytic|, |numeric|, floor).
GradCheckReport grad_check(const DifferentiableFunction& fn, const std::vector<Vector>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace macd
