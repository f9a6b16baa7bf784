// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/cropdetect.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace vertenet {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Breadth-first component labeling over the set pixels, 4-connectivity.
std::vector<ComponentBox> label_components(const std::vector<std::uint8_t>& mask,
                                           int width, int height) {
  std::vector<ComponentBox> components;
  std::vector<std::uint8_t> visited(mask.size(), 0);
  std::deque<std::pair<int, int>> queue;
  for (int sy = 0; sy < height; ++sy) {
    for (int sx = 0; sx < width; ++sx) {
      const std::size_t start = static_cast<std::size_t>(sy) * width + sx;
      if (!mask[start] || visited[start]) continue;
      ComponentBox box{sx, sy, sx, sy, 0};
      visited[start] = 1;
      queue.push_back({sx, sy});
      while (!queue.empty()) {
        const auto [x, y] = queue.front();
        queue.pop_front();
        ++box.area;
        box.x0 = std::min(box.x0, x);
        box.x1 = std::max(box.x1, x);
        box.y0 = std::min(box.y0, y);
        box.y1 = std::max(box.y1, y);
        constexpr int dx[4] = {1, -1, 0, 0};
        constexpr int dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int nx = x + dx[k];
          const int ny = y + dy[k];
          if (nx < 0 || nx >= width || ny < 0 || ny >= height) continue;
          const std::size_t ni = static_cast<std::size_t>(ny) * width + nx;
          if (mask[ni] && !visited[ni]) {
            visited[ni] = 1;
            queue.push_back({nx, ny});
          }
        }
      }
      components.push_back(box);
    }
  }
  return components;
}

}  // namespace

void CropConfig::validate() const {
  require(factor > 0.0, "CropConfig: factor must be positive");
  require(sample_count >= 2, "CropConfig: sample_count must be >= 2");
  require(morphology_kernel >= 1 && morphology_kernel % 2 == 1,
          "CropConfig: morphology kernel must be odd (center undefined "
          "otherwise), got " +
              std::to_string(morphology_kernel));
}

const char* violation_reason_name(ViolationReason r) {
  return r == ViolationReason::BeyondWidth ? "beyond-width" : "in-black-region";
}

BlackRegionMask detect_black_regions(const GrayImage& image,
                                     const CropConfig& cfg) {
  const double min_area =
      cfg.min_component_area >= 0.0
          ? cfg.min_component_area
          : 0.005 * static_cast<double>(image.width) * image.height;

  BlackRegionMask out;
  out.width = image.width;
  out.height = image.height;
  std::vector<std::uint8_t> raw(image.pixels.size(), 0);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    raw[i] = image.pixels[i] <= cfg.black_threshold ? 1 : 0;
  }

  const auto components = label_components(raw, image.width, image.height);
  out.mask.assign(raw.size(), 0);
  for (const ComponentBox& box : components) {
    if (box.area < min_area) continue;
    out.components.push_back(box);
  }
  if (out.components.empty()) return out;

  // Repaint only the kept components.
  std::vector<std::uint8_t> keep(raw.size(), 0);
  for (const ComponentBox& box : out.components) {
    // flood again restricted to the box; cheaper to re-threshold inside boxes
    for (int y = box.y0; y <= box.y1; ++y) {
      for (int x = box.x0; x <= box.x1; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * image.width + x;
        if (raw[i]) keep[i] = 1;
      }
    }
  }
  out.mask = std::move(keep);
  return out;
}

BlackRegionMask smooth_mask(const BlackRegionMask& mask,
                            const CropConfig& cfg) {
  require(cfg.morphology_kernel % 2 == 1,
          "smooth_mask: kernel size must be odd, got " +
              std::to_string(cfg.morphology_kernel));
  const int radius = cfg.morphology_kernel / 2;
  const int w = mask.width;
  const int h = mask.height;

  // Border handling follows the usual convention: dilation sees background
  // outside the frame, erosion sees foreground, so regions touching the
  // frame edge keep their edge after closing.
  auto morph = [&](const std::vector<std::uint8_t>& src, bool dilate) {
    std::vector<std::uint8_t> dst(src.size());
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        bool hit = !dilate;
        for (int dy = -radius; dy <= radius && hit != dilate; ++dy) {
          for (int dx = -radius; dx <= radius; ++dx) {
            const int ny = y + dy;
            const int nx = x + dx;
            const bool inside =
                ny >= 0 && ny < h && nx >= 0 && nx < w;
            const bool v = inside
                               ? src[static_cast<std::size_t>(ny) * w + nx] != 0
                               : !dilate;
            if (dilate && v) {
              hit = true;
              break;
            }
            if (!dilate && !v) {
              hit = false;
              break;
            }
          }
        }
        dst[static_cast<std::size_t>(y) * w + x] = hit ? 1 : 0;
      }
    }
    return dst;
  };

  BlackRegionMask out;
  out.width = w;
  out.height = h;
  out.mask = morph(morph(mask.mask, true), false);
  out.components = label_components(out.mask, w, h);
  return out;
}

std::vector<Point> anterior_points_at_d(const GuideSet& guides, double d) {
  require(d > 0.0, "anterior_points_at_d: d must be positive");
  std::vector<Point> out;
  out.reserve(guides.anterior_chain.size());
  for (std::size_t i = 0; i < guides.anterior_chain.size(); ++i) {
    const Guide& g = guides.anterior_chain[i];
    const Point dir = g.anterior - g.posterior;
    const double len = std::hypot(dir.x, dir.y);
    require(len > 0.0, "anterior_points_at_d: zero-length guide segment at "
                       "chain index " +
                           std::to_string(i));
    out.push_back(g.anterior + dir * (d / len));
  }
  std::sort(out.begin(), out.end(),
            [](const Point& a, const Point& b) { return a.y < b.y; });
  return out;
}

CropReport detect_crop(int image_w, int image_h, const BlackRegionMask& mask,
                       const LandmarkSet& landmarks, const CropConfig& cfg,
                       Orientation orientation) {
  cfg.validate();
  require(image_w > 0 && image_h > 0, "detect_crop: empty image dims");

  const double d = cfg.factor * (1.0 + mean_vertebral_width(landmarks));
  const GuideSet guides = generate_ivgs(landmarks, orientation);
  const std::vector<Point> anchors = anterior_points_at_d(guides, d);
  const NaturalCubicSpline spline = NaturalCubicSpline::fit(anchors);
  const std::vector<Point> samples = sample_spline(spline, cfg.sample_count);

  auto nearest_level = [&](double y) {
    double best = std::numeric_limits<double>::infinity();
    std::string label;
    for (const Vertebra& v : landmarks.vertebrae) {
      const double dist = std::fabs(v.center.y - y);
      if (dist < best) {
        best = dist;
        label = v.label;
      }
    }
    return label;
  };

  CropReport report;
  report.probe_distance = d;
  report.spline_samples = samples;
  for (const Point& pt : samples) {
    const bool beyond = orientation == Orientation::AnteriorRight
                            ? pt.x > image_w - 1.0
                            : pt.x < 0.0;
    if (beyond) {
      report.violations.push_back(
          {pt, ViolationReason::BeyondWidth, nearest_level(pt.y)});
      continue;
    }
    if (!mask.empty()) {
      const int ix = static_cast<int>(std::lround(pt.x));
      const int iy = static_cast<int>(std::lround(pt.y));
      if (ix >= 0 && ix < mask.width && iy >= 0 && iy < mask.height &&
          mask.at(iy, ix)) {
        report.violations.push_back(
            {pt, ViolationReason::InBlackRegion, nearest_level(pt.y)});
      }
    }
  }
  report.cropped = !report.violations.empty();
  report.percent =
      100.0 * static_cast<double>(report.violations.size()) / samples.size();
  return report;
}

double confusion_accuracy_percent(const ConfusionCounts& c) {
  const int total = c.total();
  require(total > 0, "confusion_accuracy_percent: empty confusion counts");
  return 100.0 * static_cast<double>(c.tp + c.tn) / total;
}

SweepResult factor_sweep(const std::vector<SweepEntry>& entries,
                         const std::vector<double>& factors,
                         const CropConfig& cfg, Orientation orientation) {
  SweepResult result;
  std::vector<const SweepEntry*> labeled;
  for (const SweepEntry& e : entries) {
    if (e.cropped_label.has_value()) {
      labeled.push_back(&e);
    } else {
      result.skipped.push_back(e.id);
    }
  }
  require(!labeled.empty(), "factor_sweep: no labeled entries");

  for (double factor : factors) {
    CropConfig fcfg = cfg;
    fcfg.factor = factor;
    SweepRow row;
    row.factor = factor;
    for (const SweepEntry* e : labeled) {
      const CropReport report = detect_crop(e->image_w, e->image_h, e->mask,
                                            e->landmarks, fcfg, orientation);
      const bool label = *e->cropped_label;
      if (label && report.cropped) ++row.counts.tp;
      if (label && !report.cropped) ++row.counts.fn;
      if (!label && report.cropped) ++row.counts.fp;
      if (!label && !report.cropped) ++row.counts.tn;
    }
    row.accuracy_percent = confusion_accuracy_percent(row.counts);
    result.rows.push_back(row);
  }
  return result;
}

ClassificationMetrics classification_metrics(const ConfusionCounts& c) {
  require(c.fp >= 0 && c.fn >= 0 && c.tp >= 0 && c.tn >= 0,
          "classification_metrics: negative counts");
  ClassificationMetrics m;
  if (c.total() > 0) {
    m.accuracy_percent = 100.0 * static_cast<double>(c.tp + c.tn) / c.total();
  }
  if (c.tp + c.fn > 0) {
    m.sensitivity = static_cast<double>(c.tp) / (c.tp + c.fn);
  }
  if (c.tn + c.fp > 0) {
    m.specificity = static_cast<double>(c.tn) / (c.tn + c.fp);
  }
  if (2 * c.tp + c.fp + c.fn > 0) {
    m.f1 = 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn);
  }
  return m;
}

}  // namespace vertenet
