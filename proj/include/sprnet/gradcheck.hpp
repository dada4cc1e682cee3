// Central finite-difference check of reverse-mode gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sprnet/tensor.hpp"

namespace sprnet {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
};

/// Per-coordinate error |a - n| / max(1, |a|, |n|): relative for gradients
/// of magnitude above one, absolute below, so entries that are exactly zero
/// analytically do not divide by round-off.
inline double gradcheck_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Checks d f / d x_i for every coordinate of every input. `f` must return a
/// scalar and must rebuild its graph from the given inputs on every call.
inline GradCheckReport finite_diff_check(const ScalarFn& f, std::vector<Tensor<double>> inputs,
                                         double eps, double tol) {
  for (auto& x : inputs) {
    x.zero_grad();
    x.set_requires_grad(true);
  }
  const Tensor<double> root = f(inputs);
  if (root.numel() != 1) {
    throw Error("finite_diff_check: function must be scalar-valued, got " + root.shape().str());
  }
  backward(root);
  GradCheckReport report;
  for (auto& x : inputs) {
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    auto values = x.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus = 0.0;
      double minus = 0.0;
      {
        NoGradGuard guard;
        values[i] = saved + eps;
        plus = f(inputs).item();
        values[i] = saved - eps;
        minus = f(inputs).item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = gradcheck_error(analytic[i], numeric);
      if (err > report.max_rel_error || report.coordinates == 0) {
        report.max_rel_error = err;
        report.worst_index = report.coordinates;
        report.analytic_at_worst = analytic[i];
        report.numeric_at_worst = numeric;
      }
      ++report.coordinates;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

inline GradCheckReport finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                         const Tensor<double>& x, double eps, double tol) {
  return finite_diff_check(
      [&f](const std::vector<Tensor<double>>& in) { return f(in[0]); }, {x}, eps, tol);
}

}  // namespace sprnet
