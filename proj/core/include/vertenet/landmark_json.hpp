// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "vertenet/guides.hpp"
#include "vertenet/model.hpp"

namespace vertenet {

// The landmark interchange document: one per image, optionally carrying the
// generated guides.
struct LandmarkDocument {
  int schema_version = 1;
  std::string image_id;
  int width = 0;
  int height = 0;
  Orientation orientation = Orientation::AnteriorRight;
  LandmarkSet landmarks;
  std::optional<GuideSet> guides;
};

bool operator==(const LandmarkDocument& a, const LandmarkDocument& b);

std::string serialize_landmark_document(const LandmarkDocument& doc);
LandmarkDocument parse_landmark_document(const std::string& json_text);

void write_landmark_document(const std::filesystem::path& path,
                             const LandmarkDocument& doc);
LandmarkDocument read_landmark_document(const std::filesystem::path& path);

}  // namespace vertenet
