// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace vertenet {

// Grayscale raster with intensities in [0, 1], row-major from the top-left.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  double at(int y, int x) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  double& at(int y, int x) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  static GrayImage filled(int width, int height, double value);
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB

  void set(int y, int x, std::array<std::uint8_t, 3> rgb);
  std::array<std::uint8_t, 3> get(int y, int x) const;
  static RgbImage from_gray(const GrayImage& g);
};

// Readers accept 8- and 16-bit grayscale PGM (P5) and PNG, converting to
// [0, 1]. Writers pick the format from the file extension.
GrayImage read_gray_image(const std::filesystem::path& path);
void write_gray_image(const std::filesystem::path& path, const GrayImage& img);
void write_rgb_png(const std::filesystem::path& path, const RgbImage& img);

}  // namespace vertenet
