// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>

#include "vertenet/cropdetect.hpp"
#include "vertenet/guides.hpp"
#include "vertenet/image.hpp"
#include "vertenet/model.hpp"

namespace vertenet {

// Overlay palette. Violation markers use a color nothing else draws so
// tests can count them back out of the raster.
inline constexpr std::array<std::uint8_t, 3> kInterGuideColor{255, 0, 0};
inline constexpr std::array<std::uint8_t, 3> kIntraGuideColor{255, 255, 0};
inline constexpr std::array<std::uint8_t, 3> kSplineColor{0, 90, 255};
inline constexpr std::array<std::uint8_t, 3> kChainMarkerColor{220, 30, 30};
inline constexpr std::array<std::uint8_t, 3> kLandmarkColor{0, 220, 0};
inline constexpr std::array<std::uint8_t, 3> kViolationColor{255, 0, 255};

struct OverlayInputs {
  const LandmarkSet* landmarks = nullptr;
  const GuideSet* guides = nullptr;
  const CropReport* report = nullptr;  // draws spline samples and violations
};

// Burns guides, chain markers, spline samples and violation crosses into an
// RGB copy of the image. With no overlay inputs the image is returned as an
// unmodified RGB copy.
RgbImage render_overlay(const GrayImage& image, const OverlayInputs& inputs);

}  // namespace vertenet
