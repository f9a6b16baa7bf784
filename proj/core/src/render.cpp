// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/render.hpp"

#include <cmath>

namespace vertenet {

namespace {

void put(RgbImage& img, int y, int x, std::array<std::uint8_t, 3> color) {
  if (y < 0 || y >= img.height || x < 0 || x >= img.width) return;
  img.set(y, x, color);
}

void draw_line(RgbImage& img, Point a, Point b,
               std::array<std::uint8_t, 3> color) {
  int x0 = static_cast<int>(std::lround(a.x));
  int y0 = static_cast<int>(std::lround(a.y));
  const int x1 = static_cast<int>(std::lround(b.x));
  const int y1 = static_cast<int>(std::lround(b.y));
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    put(img, y0, x0, color);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void draw_dot(RgbImage& img, Point p, int radius,
              std::array<std::uint8_t, 3> color) {
  const int cx = static_cast<int>(std::lround(p.x));
  const int cy = static_cast<int>(std::lround(p.y));
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy <= radius * radius) {
        put(img, cy + dy, cx + dx, color);
      }
    }
  }
}

void draw_cross(RgbImage& img, Point p, int radius,
                std::array<std::uint8_t, 3> color) {
  const int cx = static_cast<int>(std::lround(p.x));
  const int cy = static_cast<int>(std::lround(p.y));
  for (int d = -radius; d <= radius; ++d) {
    put(img, cy + d, cx, color);
    put(img, cy, cx + d, color);
  }
}

}  // namespace

RgbImage render_overlay(const GrayImage& image, const OverlayInputs& inputs) {
  RgbImage out = RgbImage::from_gray(image);

  if (inputs.landmarks) {
    for (const Vertebra& v : inputs.landmarks->vertebrae) {
      const auto& c = v.corners;
      draw_line(out, c[0], c[1], kLandmarkColor);
      draw_line(out, c[1], c[3], kLandmarkColor);
      draw_line(out, c[3], c[2], kLandmarkColor);
      draw_line(out, c[2], c[0], kLandmarkColor);
      draw_dot(out, v.center, 1, kLandmarkColor);
    }
  }
  if (inputs.guides) {
    for (const Guide& g : inputs.guides->inter) {
      draw_line(out, g.posterior, g.anterior, kInterGuideColor);
    }
    for (const Guide& g : inputs.guides->intra) {
      draw_line(out, g.posterior, g.anterior, kIntraGuideColor);
    }
    for (const Guide& g : inputs.guides->anterior_chain) {
      draw_dot(out, g.anterior, 2, kChainMarkerColor);
    }
  }
  if (inputs.report) {
    for (const Point& p : inputs.report->spline_samples) {
      put(out, static_cast<int>(std::lround(p.y)),
          static_cast<int>(std::lround(p.x)), kSplineColor);
    }
    for (const Violation& v : inputs.report->violations) {
      // Beyond-width samples sit outside the frame; clamp the marker inside
      // so every violation is visible.
      Point p = v.sample;
      p.x = std::min(std::max(p.x, 2.0), image.width - 3.0);
      p.y = std::min(std::max(p.y, 2.0), image.height - 3.0);
      draw_cross(out, p, 2, kViolationColor);
    }
  }
  return out;
}

}  // namespace vertenet
