// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vertenet/guides.hpp"
#include "vertenet/image.hpp"
#include "vertenet/spline.hpp"

namespace vertenet {

struct ComponentBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive bounds
  int area = 0;
};

struct BlackRegionMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> mask;
  std::vector<ComponentBox> components;

  bool empty() const { return components.empty(); }
  bool at(int y, int x) const {
    return mask[static_cast<std::size_t>(y) * width + x] != 0;
  }
};

struct CropConfig {
  double factor = 1.2;
  int sample_count = 500;
  double black_threshold = 0.0;
  // px^2; negative selects the default of 0.5% of the image area
  double min_component_area = -1.0;
  int morphology_kernel = 5;

  void validate() const;
};

// Pixels at or below black_threshold, grouped by 4-connectivity; components
// below the area floor are discarded. An empty result routes the image down
// the "no black regions" path.
BlackRegionMask detect_black_regions(const GrayImage& image,
                                     const CropConfig& cfg);

// Morphological closing (dilate then erode) with a square kernel.
BlackRegionMask smooth_mask(const BlackRegionMask& mask, const CropConfig& cfg);

// For every guide in the anterior chain, steps distance d along the guide's
// posterior-to-anterior direction, beyond the anterior endpoint. Ordered by y.
std::vector<Point> anterior_points_at_d(const GuideSet& guides, double d);

enum class ViolationReason { BeyondWidth, InBlackRegion };
const char* violation_reason_name(ViolationReason r);

struct Violation {
  Point sample;
  ViolationReason reason = ViolationReason::BeyondWidth;
  std::string level;  // nearest vertebra by y
};

struct CropReport {
  bool cropped = false;
  double percent = 0.0;
  std::vector<Violation> violations;
  double probe_distance = 0.0;        // the d actually used
  std::vector<Point> spline_samples;  // all sampled spline points
};

// The full pipeline: guides -> anterior offset points at
// d = factor * (1 + mean vertebral width) -> natural cubic spline -> dense
// samples -> boundary and black-region violation tests.
CropReport detect_crop(int image_w, int image_h, const BlackRegionMask& mask,
                       const LandmarkSet& landmarks, const CropConfig& cfg,
                       Orientation orientation);

struct ConfusionCounts {
  int fp = 0, fn = 0, tp = 0, tn = 0;
  int total() const { return fp + fn + tp + tn; }
};

double confusion_accuracy_percent(const ConfusionCounts& c);

struct SweepEntry {
  std::string id;
  int image_w = 0;
  int image_h = 0;
  BlackRegionMask mask;  // pre-smoothed
  LandmarkSet landmarks;
  std::optional<bool> cropped_label;
};

struct SweepRow {
  double factor = 0.0;
  ConfusionCounts counts;
  double accuracy_percent = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<std::string> skipped;  // entries without a label
};

SweepResult factor_sweep(const std::vector<SweepEntry>& entries,
                         const std::vector<double>& factors,
                         const CropConfig& cfg, Orientation orientation);

struct ClassificationMetrics {
  std::optional<double> accuracy_percent;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> f1;
};

ClassificationMetrics classification_metrics(const ConfusionCounts& c);

}  // namespace vertenet
