// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/spline.hpp"

#include <stdexcept>
#include <string>

namespace vertenet {

NaturalCubicSpline NaturalCubicSpline::fit(const std::vector<Point>& knots) {
  const std::size_t n = knots.size();
  if (n < 2) {
    throw std::invalid_argument("spline: needs at least 2 knots, got " +
                                std::to_string(n));
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (!(knots[i].y > knots[i - 1].y)) {
      throw std::invalid_argument(
          "spline: knot y values must be strictly increasing (knot " +
          std::to_string(i) + ")");
    }
  }

  NaturalCubicSpline s;
  s.y_.resize(n);
  s.x_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.y_[i] = knots[i].y;
    s.x_[i] = knots[i].x;
  }
  s.m_.assign(n, 0.0);
  if (n == 2) return s;  // natural boundary forces a straight segment

  // Moment equations, solved with the Thomas algorithm. Unknowns are the
  // n-2 interior second derivatives; the natural ends are zero.
  const std::size_t m = n - 2;
  std::vector<double> diag(m), upper(m), rhs(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double h0 = s.y_[i + 1] - s.y_[i];
    const double h1 = s.y_[i + 2] - s.y_[i + 1];
    diag[i] = (h0 + h1) / 3.0;
    upper[i] = h1 / 6.0;
    rhs[i] = (s.x_[i + 2] - s.x_[i + 1]) / h1 - (s.x_[i + 1] - s.x_[i]) / h0;
  }
  // forward sweep; the subdiagonal equals the previous row's upper entry
  for (std::size_t i = 1; i < m; ++i) {
    const double lower = upper[i - 1];
    const double w = lower / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  std::vector<double> sol(m);
  sol[m - 1] = rhs[m - 1] / diag[m - 1];
  for (std::size_t i = m - 1; i-- > 0;) {
    sol[i] = (rhs[i] - upper[i] * sol[i + 1]) / diag[i];
  }
  for (std::size_t i = 0; i < m; ++i) s.m_[i + 1] = sol[i];
  return s;
}

double NaturalCubicSpline::operator()(double y) const {
  const std::size_t n = y_.size();
  // interval index; end polynomials extend beyond the knot range
  std::size_t i = 0;
  if (y >= y_[n - 2]) {
    i = n - 2;
  } else if (y > y_[0]) {
    std::size_t lo = 0, hi = n - 2;
    while (lo < hi) {
      const std::size_t mid = (lo + hi + 1) / 2;
      if (y_[mid] <= y) {
        lo = mid;
      } else {
        hi = mid - 1;
      }
    }
    i = lo;
  }
  const double h = y_[i + 1] - y_[i];
  const double a = (y_[i + 1] - y) / h;
  const double b = (y - y_[i]) / h;
  return a * x_[i] + b * x_[i + 1] +
         ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * (h * h) /
             6.0;
}

std::vector<Point> sample_spline(const NaturalCubicSpline& spline, int count) {
  if (count < 2) {
    throw std::invalid_argument("sample_spline: count must be >= 2, got " +
                                std::to_string(count));
  }
  const double y0 = spline.y_front();
  const double y1 = spline.y_back();
  std::vector<Point> out;
  out.reserve(count);
  for (int j = 0; j < count; ++j) {
    const double y = y0 + (y1 - y0) * j / (count - 1);
    out.push_back({spline(y), y});
  }
  return out;
}

}  // namespace vertenet
