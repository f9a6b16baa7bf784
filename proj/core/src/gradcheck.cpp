// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace vertenet {

GradcheckReport finite_diff_gradcheck(
    const std::function<Tensor()>& f,
    const std::vector<std::pair<std::string, Tensor>>& points, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("gradcheck: eps must be > 0");
  for (const auto& [name, t] : points) {
    if (!t.requires_grad()) {
      throw std::invalid_argument("gradcheck: tensor '" + name +
                                  "' does not carry gradients");
    }
  }

  for (auto& [name, t] : points) const_cast<Tensor&>(t).zero_grad();
  Tensor out = f();
  if (out.numel() != 1) {
    throw std::invalid_argument("gradcheck: f must return a scalar, got " +
                                out.shape().str());
  }
  if (!std::isfinite(out.value())) {
    throw std::runtime_error("gradcheck: f is non-finite at the base point");
  }
  backward(out);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(points.size());
  for (const auto& [name, t] : points) {
    analytic.emplace_back(t.grad().begin(), t.grad().end());
  }

  GradcheckReport report;
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    const std::string& name = points[pi].first;
    Tensor t = points[pi].second;
    auto data = t.data_mut();
    NoGradGuard value_only;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double f_plus = f().value();
      data[i] = saved - eps;
      const double f_minus = f().value();
      data[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw std::runtime_error("gradcheck: f non-finite while probing '" +
                                 name + "' coordinate " + std::to_string(i));
      }
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double rel = std::fabs(analytic[pi][i] - numeric) /
                         std::max(1.0, std::fabs(numeric));
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_tensor = name;
        report.worst_index = i;
        report.worst_analytic = analytic[pi][i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace vertenet
