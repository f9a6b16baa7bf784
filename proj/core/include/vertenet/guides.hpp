// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "vertenet/geometry.hpp"
#include "vertenet/model.hpp"

namespace vertenet {

// Which image side the aorta (anterior soft tissue) lies on.
enum class Orientation { AnteriorRight, AnteriorLeft };

const char* orientation_name(Orientation o);
Orientation orientation_from_name(const std::string& name);

enum class GuideKind { Inter, Intra };

struct Guide {
  Point anterior;
  Point posterior;
  GuideKind kind = GuideKind::Inter;
  // Inter guide i runs between vertebrae i and i+1; intra guide j crosses
  // vertebra j.
  int index = 0;
};

struct GuideSet {
  Orientation orientation = Orientation::AnteriorRight;
  std::vector<Guide> inter;  // K-1 guides
  std::vector<Guide> intra;  // K guides
  // Every guide, ordered by its anterior endpoint's y: 2K-1 entries.
  std::vector<Guide> anterior_chain;
};

// Labels an unordered quad: the superior pair is the two smallest y; within
// each pair the anterior corner has the larger x under anterior-right (the
// smaller under anterior-left). Rejects self-intersecting quads. The result
// is indexed by CornerId.
std::array<Point, 4> classify_corners(const std::array<Point, 4>& quad,
                                      Orientation orientation);

// Mean over vertebrae of the distance between the anterior and posterior
// edge midpoints.
double mean_vertebral_width(const LandmarkSet& landmarks);

// Inter guide i: endpoints midway between vertebra i's inferior corners and
// vertebra i+1's superior corners, per side. Intra guide j: vertebra j's
// edge midpoints.
GuideSet generate_ivgs(const LandmarkSet& landmarks, Orientation orientation);

}  // namespace vertenet
