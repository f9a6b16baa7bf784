// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "vertenet/geometry.hpp"

namespace vertenet {

// Natural cubic spline interpolating x as a function of y: zero second
// derivative at both end knots, exact at every knot.
class NaturalCubicSpline {
 public:
  // Knots must be strictly increasing in y; at least two.
  static NaturalCubicSpline fit(const std::vector<Point>& knots);

  double operator()(double y) const;
  double y_front() const { return y_.front(); }
  double y_back() const { return y_.back(); }
  const std::vector<double>& knot_y() const { return y_; }
  const std::vector<double>& knot_x() const { return x_; }

 private:
  std::vector<double> y_;
  std::vector<double> x_;
  std::vector<double> m_;  // second derivatives at the knots
};

// count points evenly spaced in y across the knot range.
std::vector<Point> sample_spline(const NaturalCubicSpline& spline, int count);

}  // namespace vertenet
