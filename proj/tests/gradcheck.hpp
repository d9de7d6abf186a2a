#pragma once

// Central finite-difference gradient oracle. Re-evaluates the scalar function
// at perturbed leaf inputs, so it stays independent of the autograd path it
// checks. Functions under test must rebuild their graph on every call and
// derive any internal randomness from a fixed seed.
//
// The reported error is the vector relative error per input tensor,
// ||analytic - fd|| / (||analytic|| + ||fd||), which stays well-conditioned
// when individual gradient elements are close to zero; elementwise ratios
// would be dominated by the h^2 truncation term of the probe itself there.

#include <cmath>
#include <functional>
#include <vector>

#include "gctaf/tensor.hpp"

namespace gctaf::test {

struct GradCheckResult {
  double max_rel_err = 0.0;
  size_t checked = 0;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

inline GradCheckResult grad_check(const ScalarFn& fn, std::vector<Tensor> inputs,
                                  double h = 1e-5) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor loss = fn(inputs);
  loss.backward();

  std::vector<std::vector<double>> analytic;
  for (const Tensor& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(t.size(), 0.0);
  }

  GradCheckResult result;
  for (size_t i = 0; i < inputs.size(); ++i) {
    double* data = inputs[i].mutable_data();
    double diff_sq = 0.0, a_sq = 0.0, fd_sq = 0.0;
    for (size_t e = 0; e < inputs[i].size(); ++e) {
      double saved = data[e];
      data[e] = saved + h;
      double f_plus = fn(inputs).value();
      data[e] = saved - h;
      double f_minus = fn(inputs).value();
      data[e] = saved;
      double fd = (f_plus - f_minus) / (2.0 * h);
      double a = analytic[i][e];
      diff_sq += (a - fd) * (a - fd);
      a_sq += a * a;
      fd_sq += fd * fd;
      ++result.checked;
    }
    double denom = std::max(std::sqrt(a_sq) + std::sqrt(fd_sq), 1e-6);
    result.max_rel_err = std::max(result.max_rel_err, std::sqrt(diff_sq) / denom);
  }
  return result;
}

// Scoped NaN-guard toggle for tests.
struct NanGuardScope {
  explicit NanGuardScope(bool enabled) : previous(nan_guard_enabled()) {
    set_nan_guard(enabled);
  }
  ~NanGuardScope() { set_nan_guard(previous); }
  bool previous;
};

}  // namespace gctaf::test
