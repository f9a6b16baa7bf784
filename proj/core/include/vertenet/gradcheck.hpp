// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vertenet/tensor.hpp"

namespace vertenet {

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Checks reverse-mode gradients of the scalar-valued closure `f` against
// central finite differences at every coordinate of every listed leaf.
// Reports max over coordinates of |analytic - numeric| / max(1, |numeric|).
// Throws std::runtime_error naming the tensor and coordinate if f evaluates
// to a non-finite value at any probe.
GradcheckReport finite_diff_gradcheck(
    const std::function<Tensor()>& f,
    const std::vector<std::pair<std::string, Tensor>>& points,
    double eps = 1e-5);

}  // namespace vertenet
