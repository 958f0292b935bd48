#pragma once

// Central-difference gradient checks shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gridflow/diff.hpp"

namespace gridflow::testing {

struct GradCheckResult {
  double worst_rel = 0.0;
  std::string worst_where;
  std::size_t checked = 0;
};

/// Relative error with a floor so that gradients near zero are compared absolutely.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backward() against (f(x+eps) - f(x-eps)) / 2eps for every entry of every leaf.
/// stride > 1 samples every stride-th entry of large leaves.
inline GradCheckResult grad_check(const std::vector<std::pair<std::string, diff::Tensor>>& leaves,
                                  const std::function<diff::Tensor()>& loss, double eps = 1e-5,
                                  std::size_t stride = 1) {
  for (auto [name, t] : leaves) t.zero_grad();
  diff::backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& [name, t] : leaves) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradCheckResult result;
  diff::NoGradGuard no_grad;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto t = leaves[k].second;
    auto values = t.mutable_values();
    const std::size_t step = values.size() > 64 ? stride : 1;
    for (std::size_t i = 0; i < values.size(); i += step) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = loss().item();
      values[i] = saved - eps;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double rel = relative_error(analytic[k][i], numeric);
      ++result.checked;
      if (rel > result.worst_rel) {
        result.worst_rel = rel;
        result.worst_where = leaves[k].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

inline std::vector<std::pair<std::string, diff::Tensor>> leaves_of(const diff::ParameterSet& params) {
  std::vector<std::pair<std::string, diff::Tensor>> out;
  for (const auto& p : params.items()) out.emplace_back(p.name, p.tensor);
  return out;
}

}  // namespace gridflow::testing
