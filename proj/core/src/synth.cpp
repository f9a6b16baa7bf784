// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include "vertenet/model.hpp"

namespace vertenet {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Smooth value noise: a coarse random grid interpolated bilinearly.
void add_value_noise(GrayImage& img, Rng& rng, int cells, double amplitude) {
  const int gw = cells + 1;
  std::vector<double> grid(static_cast<std::size_t>(gw) * gw);
  for (auto& v : grid) v = rng.uniform(-1.0, 1.0);
  for (int y = 0; y < img.height; ++y) {
    const double gy = static_cast<double>(y) / (img.height - 1) * cells;
    const int y0 = std::min(static_cast<int>(gy), cells - 1);
    const double ty = gy - y0;
    for (int x = 0; x < img.width; ++x) {
      const double gx = static_cast<double>(x) / (img.width - 1) * cells;
      const int x0 = std::min(static_cast<int>(gx), cells - 1);
      const double tx = gx - x0;
      const double v00 = grid[static_cast<std::size_t>(y0) * gw + x0];
      const double v01 = grid[static_cast<std::size_t>(y0) * gw + x0 + 1];
      const double v10 = grid[static_cast<std::size_t>(y0 + 1) * gw + x0];
      const double v11 = grid[static_cast<std::size_t>(y0 + 1) * gw + x0 + 1];
      const double val = (1 - ty) * ((1 - tx) * v00 + tx * v01) +
                         ty * ((1 - tx) * v10 + tx * v11);
      img.at(y, x) += amplitude * val;
    }
  }
}

void fill_convex_quad(GrayImage& img, const std::array<Point, 4>& poly,
                      double brightness) {
  double min_x = poly[0].x, max_x = poly[0].x;
  double min_y = poly[0].y, max_y = poly[0].y;
  for (const Point& p : poly) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const int x0 = std::max(0, static_cast<int>(std::floor(min_x)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(max_x)));
  const int y0 = std::max(0, static_cast<int>(std::floor(min_y)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(max_y)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Point q{x + 0.5, y + 0.5};
      bool pos = false, neg = false;
      for (int e = 0; e < 4; ++e) {
        const Point& a = poly[e];
        const Point& b = poly[(e + 1) % 4];
        const double cross =
            (b.x - a.x) * (q.y - a.y) - (b.y - a.y) * (q.x - a.x);
        if (cross > 0) pos = true;
        if (cross < 0) neg = true;
      }
      if (pos && neg) continue;  // outside
      img.at(y, x) = std::max(img.at(y, x), brightness);
    }
  }
}

}  // namespace

GrayImage GrayImage::filled(int width, int height, double value) {
  GrayImage g;
  g.width = width;
  g.height = height;
  g.pixels.assign(static_cast<std::size_t>(width) * height, value);
  return g;
}

std::vector<SynthSample> synth_generate(std::uint64_t seed, int count,
                                        int height, int width,
                                        const SynthOptions& options) {
  require(count >= 1, "synth_generate: count must be >= 1");
  require(height >= 32 && width >= 32 && height % 32 == 0 && width % 32 == 0,
          "synth_generate: size " + std::to_string(width) + "x" +
              std::to_string(height) + " must be >= 32 and divisible by 32");
  require(options.vertebra_count >= 1,
          "synth_generate: vertebra_count must be >= 1");
  require(options.band_left >= 0 && options.band_right >= 0 &&
              options.band_left + options.band_right < width,
          "synth_generate: side bands exceed the image width");

  Rng rng(seed);
  std::vector<SynthSample> samples;
  samples.reserve(count);
  const int k = options.vertebra_count;

  for (int n = 0; n < count; ++n) {
    SynthSample sample;
    sample.image = GrayImage::filled(width, height, 0.25);
    add_value_noise(sample.image, rng, 8, 0.06);
    add_value_noise(sample.image, rng, 20, 0.03);

    const double top = 0.12 * height;
    const double usable = height - 2.0 * top;
    const double slot = usable / k;
    const double anchor = rng.uniform(0.5, 0.6);
    const double amp = rng.uniform(0.02, 0.06);
    const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);

    auto centerline_x = [&](double y) {
      const double t = (y - top) / usable;
      return width * (anchor + amp * std::sin(3.14159265358979323846 * t + phase));
    };

    sample.landmarks.image_width = width;
    sample.landmarks.image_height = height;
    for (int i = 0; i < k; ++i) {
      const double cy = top + (i + 0.5) * slot + rng.uniform(-0.05, 0.05) * slot;
      const double cx = centerline_x(cy);
      // Tilt follows the centerline tangent, with a little per-vertebra noise.
      const double slope =
          (centerline_x(cy + 1.0) - centerline_x(cy - 1.0)) / 2.0;
      const double theta = std::atan(slope) * 0.7 + rng.uniform(-0.05, 0.05);
      const double vw = width * rng.uniform(0.22, 0.30);
      const double vh = slot * rng.uniform(0.55, 0.70);

      Vertebra v;
      v.label = vertebra_label(i, k);
      v.center = {cx, cy};
      const double ct = std::cos(theta), st = std::sin(theta);
      auto place = [&](double lx, double ly) {
        const double jx = rng.uniform(-0.01, 0.01) * vw;
        const double jy = rng.uniform(-0.01, 0.01) * vh;
        return Point{cx + lx * ct - ly * st + jx, cy + lx * st + ly * ct + jy};
      };
      // Anterior is +x under the anterior-right convention; superior is -y.
      v.corner(CornerId::AnteriorSuperior) = place(+vw / 2, -vh / 2);
      v.corner(CornerId::PosteriorSuperior) = place(-vw / 2, -vh / 2);
      v.corner(CornerId::AnteriorInferior) = place(+vw / 2, +vh / 2);
      v.corner(CornerId::PosteriorInferior) = place(-vw / 2, +vh / 2);

      const double brightness = rng.uniform(0.72, 0.88);
      fill_convex_quad(sample.image,
                       {v.corner(CornerId::AnteriorSuperior),
                        v.corner(CornerId::PosteriorSuperior),
                        v.corner(CornerId::PosteriorInferior),
                        v.corner(CornerId::AnteriorInferior)},
                       brightness);
      sample.landmarks.vertebrae.push_back(std::move(v));
    }

    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < options.band_left; ++x)
        sample.image.at(y, x) = options.band_value;
      for (int x = width - options.band_right; x < width; ++x)
        sample.image.at(y, x) = options.band_value;
    }
    for (auto& px : sample.image.pixels) px = std::clamp(px, 0.0, 1.0);

    samples.push_back(std::move(sample));
  }
  return samples;
}

Tensor image_batch_tensor(const std::vector<SynthSample>& samples) {
  require(!samples.empty(), "image_batch_tensor: empty batch");
  const int h = samples[0].image.height;
  const int w = samples[0].image.width;
  std::vector<double> data;
  data.reserve(samples.size() * static_cast<std::size_t>(h) * w);
  for (const auto& s : samples) {
    require(s.image.height == h && s.image.width == w,
            "image_batch_tensor: mixed image sizes");
    data.insert(data.end(), s.image.pixels.begin(), s.image.pixels.end());
  }
  return Tensor::from_vector({static_cast<int>(samples.size()), 1, h, w},
                             std::move(data));
}

}  // namespace vertenet
