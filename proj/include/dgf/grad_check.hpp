#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <vector>

#include "dgf/tensor.hpp"

namespace dgf {

/// Result of comparing analytic gradients against central differences.
struct GradCheckReport {
  std::vector<double> max_discrepancy;  // one entry per checked input
  double worst = 0.0;

  bool passes(double tolerance) const { return worst <= tolerance; }
};

/// Compares reverse-mode gradients of a scalar-valued tensor function against
/// central finite differences, element by element, in 64-bit arithmetic.
///
/// The discrepancy measure is |analytic - numeric| / max(1, |analytic|,
/// |numeric|), i.e. relative error for large gradients and absolute error
/// near zero. `f` must be deterministic; the harness evaluates the baseline
/// twice and raises UsageError if the results differ bitwise.
inline GradCheckReport grad_check(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
    const std::vector<Tensor<double>>& inputs, double step = 1e-5) {
  // No NoGradScope here: the function under test may itself differentiate
  // internally (gradient penalties), which needs graph recording.
  auto eval_at = [&](const std::vector<Tensor<double>>& pts) { return f(pts).scalar(); };

  std::vector<Tensor<double>> base;
  base.reserve(inputs.size());
  for (const auto& t : inputs) base.push_back(t.detach());

  const double probe1 = eval_at(base);
  const double probe2 = eval_at(base);
  if (std::memcmp(&probe1, &probe2, sizeof(double)) != 0)
    throw UsageError("grad_check: function is not deterministic across repeated evaluation");

  // Analytic pass.
  std::vector<Tensor<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(Tensor<double>::param(t.shape(), t.values()));
  Tensor<double> loss = f(leaves);
  backward(loss);

  GradCheckReport report;
  report.max_discrepancy.resize(inputs.size(), 0.0);
  for (size_t i = 0; i < inputs.size(); ++i) {
    Vec<double> analytic(static_cast<size_t>(inputs[i].numel()), 0.0);
    if (leaves[i].grad()) analytic = *leaves[i].grad();
    for (int64_t j = 0; j < inputs[i].numel(); ++j) {
      std::vector<Tensor<double>> pts = base;
      Vec<double> vals = base[i].values();
      const double saved = vals[static_cast<size_t>(j)];
      vals[static_cast<size_t>(j)] = saved + step;
      pts[i] = Tensor<double>::from_values(base[i].shape(), vals);
      const double up = eval_at(pts);
      vals[static_cast<size_t>(j)] = saved - step;
      pts[i] = Tensor<double>::from_values(base[i].shape(), Vec<double>(vals));
      const double down = eval_at(pts);
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[static_cast<size_t>(j)];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      const double disc = std::abs(a - numeric) / denom;
      report.max_discrepancy[i] = std::max(report.max_discrepancy[i], disc);
    }
    report.worst = std::max(report.worst, report.max_discrepancy[i]);
  }
  return report;
}

}  // namespace dgf
