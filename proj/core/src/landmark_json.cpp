// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/landmark_json.hpp"

#include <fstream>

#include <json.hpp>

namespace vertenet {

namespace {

using Json = nlohmann::ordered_json;

Json point_to_json(const Point& p) { return Json::array({p.x, p.y}); }

Point point_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 2) {
    throw std::runtime_error("landmark json: expected a [x, y] pair");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

Json guide_to_json(const Guide& g) {
  Json j;
  j["kind"] = g.kind == GuideKind::Inter ? "inter" : "intra";
  j["index"] = g.index;
  j["anterior"] = point_to_json(g.anterior);
  j["posterior"] = point_to_json(g.posterior);
  return j;
}

Guide guide_from_json(const Json& j) {
  Guide g;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "inter") {
    g.kind = GuideKind::Inter;
  } else if (kind == "intra") {
    g.kind = GuideKind::Intra;
  } else {
    throw std::runtime_error("landmark json: unknown guide kind '" + kind + "'");
  }
  g.index = j.at("index").get<int>();
  g.anterior = point_from_json(j.at("anterior"));
  g.posterior = point_from_json(j.at("posterior"));
  return g;
}

}  // namespace

bool operator==(const LandmarkDocument& a, const LandmarkDocument& b) {
  // Field-by-field; the JSON round trip is exact for doubles.
  auto points_equal = [](const Point& p, const Point& q) {
    return p.x == q.x && p.y == q.y;
  };
  auto guides_equal = [&](const std::vector<Guide>& g,
                          const std::vector<Guide>& h) {
    if (g.size() != h.size()) return false;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g[i].kind != h[i].kind || g[i].index != h[i].index ||
          !points_equal(g[i].anterior, h[i].anterior) ||
          !points_equal(g[i].posterior, h[i].posterior)) {
        return false;
      }
    }
    return true;
  };

  if (a.schema_version != b.schema_version || a.image_id != b.image_id ||
      a.width != b.width || a.height != b.height ||
      a.orientation != b.orientation ||
      a.landmarks.complete != b.landmarks.complete ||
      a.landmarks.vertebrae.size() != b.landmarks.vertebrae.size() ||
      a.guides.has_value() != b.guides.has_value()) {
    return false;
  }
  for (std::size_t i = 0; i < a.landmarks.vertebrae.size(); ++i) {
    const Vertebra& va = a.landmarks.vertebrae[i];
    const Vertebra& vb = b.landmarks.vertebrae[i];
    if (va.label != vb.label || va.confidence != vb.confidence ||
        !points_equal(va.center, vb.center)) {
      return false;
    }
    for (int c = 0; c < 4; ++c) {
      if (!points_equal(va.corners[c], vb.corners[c])) return false;
    }
  }
  if (a.guides) {
    if (a.guides->orientation != b.guides->orientation ||
        !guides_equal(a.guides->inter, b.guides->inter) ||
        !guides_equal(a.guides->intra, b.guides->intra) ||
        !guides_equal(a.guides->anterior_chain, b.guides->anterior_chain)) {
      return false;
    }
  }
  return true;
}

std::string serialize_landmark_document(const LandmarkDocument& doc) {
  Json j;
  j["schema_version"] = doc.schema_version;
  j["image_id"] = doc.image_id;
  j["width"] = doc.width;
  j["height"] = doc.height;
  j["orientation"] = orientation_name(doc.orientation);
  j["complete"] = doc.landmarks.complete;
  Json vertebrae = Json::array();
  for (const Vertebra& v : doc.landmarks.vertebrae) {
    Json vj;
    vj["label"] = v.label;
    vj["center"] = point_to_json(v.center);
    vj["confidence"] = v.confidence;
    Json corners;
    for (int c = 0; c < 4; ++c) {
      corners[kCornerNames[c]] = point_to_json(v.corners[c]);
    }
    vj["corners"] = std::move(corners);
    vertebrae.push_back(std::move(vj));
  }
  j["vertebrae"] = std::move(vertebrae);
  if (doc.guides) {
    Json g;
    g["orientation"] = orientation_name(doc.guides->orientation);
    Json inter = Json::array(), intra = Json::array(), chain = Json::array();
    for (const Guide& guide : doc.guides->inter) inter.push_back(guide_to_json(guide));
    for (const Guide& guide : doc.guides->intra) intra.push_back(guide_to_json(guide));
    for (const Guide& guide : doc.guides->anterior_chain)
      chain.push_back(guide_to_json(guide));
    g["inter"] = std::move(inter);
    g["intra"] = std::move(intra);
    g["anterior_chain"] = std::move(chain);
    j["guides"] = std::move(g);
  }
  return j.dump(2) + "\n";
}

LandmarkDocument parse_landmark_document(const std::string& json_text) {
  Json j = Json::parse(json_text);
  LandmarkDocument doc;
  doc.schema_version = j.at("schema_version").get<int>();
  if (doc.schema_version != 1) {
    throw std::runtime_error("landmark json: unsupported schema version " +
                             std::to_string(doc.schema_version));
  }
  doc.image_id = j.at("image_id").get<std::string>();
  doc.width = j.at("width").get<int>();
  doc.height = j.at("height").get<int>();
  doc.orientation = orientation_from_name(j.at("orientation").get<std::string>());
  doc.landmarks.image_width = doc.width;
  doc.landmarks.image_height = doc.height;
  doc.landmarks.complete = j.value("complete", true);
  for (const Json& vj : j.at("vertebrae")) {
    Vertebra v;
    v.label = vj.at("label").get<std::string>();
    v.center = point_from_json(vj.at("center"));
    v.confidence = vj.value("confidence", 1.0);
    const Json& corners = vj.at("corners");
    for (int c = 0; c < 4; ++c) {
      v.corners[c] = point_from_json(corners.at(kCornerNames[c]));
    }
    doc.landmarks.vertebrae.push_back(std::move(v));
  }
  if (j.contains("guides")) {
    const Json& g = j.at("guides");
    GuideSet set;
    set.orientation =
        orientation_from_name(g.at("orientation").get<std::string>());
    for (const Json& guide : g.at("inter")) set.inter.push_back(guide_from_json(guide));
    for (const Json& guide : g.at("intra")) set.intra.push_back(guide_from_json(guide));
    for (const Json& guide : g.at("anterior_chain"))
      set.anterior_chain.push_back(guide_from_json(guide));
    doc.guides = std::move(set);
  }
  return doc;
}

void write_landmark_document(const std::filesystem::path& path,
                             const LandmarkDocument& doc) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  }
  os << serialize_landmark_document(doc);
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

LandmarkDocument read_landmark_document(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return parse_landmark_document(text);
}

}  // namespace vertenet
