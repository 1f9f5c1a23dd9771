#include "macd/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "macd/errors.hpp"

namespace macd {

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw InputError("cosine: length mismatch");
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw DomainError("cosine: zero-norm input");
  // Rounding can leave the ratio an ulp or two outside [-1, 1].
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

Vector softmax_temp(std::span<const double> v, double tau) {
  if (!(tau > 0.0)) throw InputError("softmax_temp: tau must be positive");
  if (v.empty()) return {};
  // Scale first so softmax_temp(v, tau) and softmax_temp(v / tau, 1) agree bitwise.
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / tau;
  const double hi = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (double& x : out) {
    x = std::exp(x - hi);
    total += x;
  }
  for (double& x : out) x /= total;
  return out;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw DomainError("log_sum_exp: empty input");
  const double hi = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(hi)) return hi;
  double total = 0.0;
  for (double x : v) total += std::exp(x - hi);
  return hi + std::log(total);
}

GradCheckReport grad_check(const DifferentiableFunction& fn, const std::vector<Vector>& inputs,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.per_input_errors.assign(inputs.size(), 0.0);

  const double base = fn.value(inputs);
  if (!std::isfinite(base)) {
    report.diagnostic = "function value is not finite at the base point";
    return report;
  }
  const std::vector<Vector> analytic = fn.gradient(inputs);
  if (analytic.size() != inputs.size()) {
    report.diagnostic = "analytic gradient has wrong number of inputs";
    return report;
  }

  std::vector<Vector> probe = inputs;
  const double h = options.step;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (analytic[k].size() != inputs[k].size()) {
      report.diagnostic = "analytic gradient shape mismatch for input " + std::to_string(k);
      return report;
    }
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x = inputs[k][i];
      probe[k][i] = x + h;
      const double plus = fn.value(probe);
      probe[k][i] = x - h;
      const double minus = fn.value(probe);
      probe[k][i] = x;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        std::ostringstream os;
        os << "non-finite evaluation perturbing input " << k << " coordinate " << i;
        report.diagnostic = os.str();
        report.passed = false;
        return report;
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double abs_err = std::abs(numeric - analytic[k][i]);
      const double denom =
          std::max({std::abs(numeric), std::abs(analytic[k][i]), options.denominator_floor});
      const double rel_err = abs_err / denom;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      report.max_rel_error = std::max(report.max_rel_error, rel_err);
      report.per_input_errors[k] = std::max(report.per_input_errors[k], rel_err);
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  if (!report.passed) {
    std::ostringstream os;
    os << "max relative error " << report.max_rel_error << " exceeds tolerance "
       << options.tolerance;
    report.diagnostic = os.str();
  }
  return report;
}

}  // namespace macd
