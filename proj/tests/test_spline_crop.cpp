// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vertenet/cropdetect.hpp"

using namespace vertenet;

namespace {

LandmarkSet rect_spine(int k, double width, double height, double pitch,
                       double cx, double y0) {
  LandmarkSet set;
  for (int i = 0; i < k; ++i) {
    Vertebra v;
    v.label = vertebra_label(i, k);
    const double cy = y0 + i * pitch;
    v.center = {cx, cy};
    v.corner(CornerId::AnteriorSuperior) = {cx + width / 2, cy - height / 2};
    v.corner(CornerId::PosteriorSuperior) = {cx - width / 2, cy - height / 2};
    v.corner(CornerId::AnteriorInferior) = {cx + width / 2, cy + height / 2};
    v.corner(CornerId::PosteriorInferior) = {cx - width / 2, cy + height / 2};
    set.vertebrae.push_back(std::move(v));
  }
  return set;
}

}  // namespace

// ---------------------------------------------------------------------------
// spline
// ---------------------------------------------------------------------------

TEST_CASE("collinear knots reproduce the straight line") {
  std::vector<Point> knots;
  for (int i = 0; i < 9; ++i) {
    knots.push_back({3.0 + 0.5 * i * 7.0, 10.0 + i * 7.0});
  }
  const auto spline = NaturalCubicSpline::fit(knots);
  for (int j = 0; j <= 1000; ++j) {
    const double y = 10.0 + 56.0 * j / 1000.0;
    const double expected = 3.0 + 0.5 * (y - 10.0);
    CHECK(std::fabs(spline(y) - expected) < 1e-10);
  }
}

TEST_CASE("two knots give the straight segment") {
  const auto spline = NaturalCubicSpline::fit({{2.0, 0.0}, {6.0, 8.0}});
  CHECK(spline(4.0) == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(spline(0.0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(spline(8.0) == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("spline interpolates every knot exactly") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Point> knots;
    double y = 0.0;
    for (int i = 0; i < 11; ++i) {
      y += rng.uniform(1.0, 9.0);
      knots.push_back({rng.uniform(-40.0, 40.0), y});
    }
    const auto spline = NaturalCubicSpline::fit(knots);
    for (const Point& k : knots) {
      CHECK(std::fabs(spline(k.y) - k.x) < 1e-10);
    }
  }
}

TEST_CASE("spline agrees with the dense-solve oracle at 1000 probes") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Point> knots;
    double y = rng.uniform(0.0, 5.0);
    for (int i = 0; i < 11; ++i) {
      y += rng.uniform(0.5, 8.0);
      knots.push_back({rng.uniform(-50.0, 50.0), y});
    }
    const auto spline = NaturalCubicSpline::fit(knots);
    const auto dense = oracle::DenseSpline::fit(knots);
    const double y0 = knots.front().y;
    const double y1 = knots.back().y;
    for (int j = 0; j <= 1000; ++j) {
      const double yy = y0 + (y1 - y0) * j / 1000.0;
      CHECK(std::fabs(spline(yy) - dense(yy)) < 1e-10);
    }
  }
}

TEST_CASE("spline rejects malformed knots") {
  CHECK_THROWS_AS(NaturalCubicSpline::fit({{0.0, 1.0}}), std::invalid_argument);
  CHECK_THROWS_AS(NaturalCubicSpline::fit({{0.0, 1.0}, {2.0, 1.0}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(NaturalCubicSpline::fit({{0.0, 2.0}, {1.0, 1.0}}),
                  std::invalid_argument);
}

TEST_CASE("spline sampling") {
  const auto spline = NaturalCubicSpline::fit({{1.0, 0.0}, {5.0, 10.0}});
  SUBCASE("two samples are the endpoints") {
    const auto pts = sample_spline(spline, 2);
    REQUIRE(pts.size() == 2);
    CHECK(pts[0].y == 0.0);
    CHECK(pts[1].y == 10.0);
  }
  SUBCASE("spacing is uniform") {
    const auto pts = sample_spline(spline, 500);
    REQUIRE(pts.size() == 500);
    const double step = 10.0 / 499.0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      CHECK(std::fabs(pts[i].y - pts[i - 1].y - step) < 1e-12);
    }
  }
  SUBCASE("count below two is rejected") {
    CHECK_THROWS_AS(sample_spline(spline, 1), std::invalid_argument);
  }
}

// ---------------------------------------------------------------------------
// black regions and morphology
// ---------------------------------------------------------------------------

TEST_CASE("black region detection") {
  CropConfig cfg;
  cfg.min_component_area = 0.0;
  SUBCASE("all-black image is one component covering the frame") {
    const GrayImage img = GrayImage::filled(12, 9, 0.0);
    const auto mask = detect_black_regions(img, cfg);
    REQUIRE(mask.components.size() == 1);
    CHECK(mask.components[0].area == 12 * 9);
    CHECK(mask.components[0].x1 == 11);
    CHECK(mask.components[0].y1 == 8);
  }
  SUBCASE("all-bright image gives the empty mask") {
    const GrayImage img = GrayImage::filled(12, 9, 1.0);
    CHECK(detect_black_regions(img, cfg).empty());
  }
  SUBCASE("two rectangles split by a bright column match the flood oracle") {
    GrayImage img = GrayImage::filled(20, 10, 1.0);
    for (int y = 2; y <= 7; ++y) {
      for (int x = 1; x <= 5; ++x) img.at(y, x) = 0.0;
      for (int x = 12; x <= 18; ++x) img.at(y, x) = 0.0;
    }
    const auto mask = detect_black_regions(img, cfg);
    REQUIRE(mask.components.size() == 2);
    std::vector<std::uint8_t> raw(img.pixels.size());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = img.pixels[i] == 0.0;
    const auto expected = oracle::flood_fill_components(raw, 20, 10);
    REQUIRE(expected.size() == 2);
    for (int i = 0; i < 2; ++i) {
      CHECK(mask.components[i].x0 == expected[i].x0);
      CHECK(mask.components[i].x1 == expected[i].x1);
      CHECK(mask.components[i].y0 == expected[i].y0);
      CHECK(mask.components[i].y1 == expected[i].y1);
      CHECK(mask.components[i].area == expected[i].area);
    }
  }
  SUBCASE("small components fall below the area floor") {
    GrayImage img = GrayImage::filled(40, 40, 1.0);
    img.at(5, 5) = 0.0;  // speckle
    CropConfig with_default;   // 0.5% of 1600 px = 8 px
    CHECK(detect_black_regions(img, with_default).empty());
  }
}

TEST_CASE("mask smoothing is a closing") {
  CropConfig cfg;
  cfg.morphology_kernel = 3;
  cfg.min_component_area = 0.0;
  SUBCASE("empty stays empty") {
    BlackRegionMask empty;
    empty.width = 8;
    empty.height = 8;
    empty.mask.assign(64, 0);
    CHECK(smooth_mask(empty, cfg).empty());
  }
  SUBCASE("single-pixel hole is filled") {
    GrayImage img = GrayImage::filled(12, 12, 1.0);
    for (int y = 3; y <= 8; ++y) {
      for (int x = 3; x <= 8; ++x) img.at(y, x) = 0.0;
    }
    img.at(5, 5) = 1.0;  // the hole
    auto mask = detect_black_regions(img, cfg);
    const auto smoothed = smooth_mask(mask, cfg);
    CHECK(smoothed.at(5, 5));
  }
  SUBCASE("closing is idempotent") {
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
      BlackRegionMask mask;
      mask.width = 24;
      mask.height = 18;
      mask.mask.resize(24 * 18);
      for (auto& v : mask.mask) v = rng.uniform() < 0.35 ? 1 : 0;
      const auto once = smooth_mask(mask, cfg);
      const auto twice = smooth_mask(once, cfg);
      CHECK(once.mask == twice.mask);
    }
  }
  SUBCASE("bands touching the frame edge keep their edge columns") {
    GrayImage img = GrayImage::filled(32, 24, 1.0);
    for (int y = 0; y < 24; ++y) {
      for (int x = 24; x < 32; ++x) img.at(y, x) = 0.0;
    }
    CropConfig band_cfg;
    band_cfg.min_component_area = 0.0;
    band_cfg.morphology_kernel = 5;
    const auto smoothed = smooth_mask(detect_black_regions(img, band_cfg),
                                      band_cfg);
    for (int y = 0; y < 24; ++y) {
      CHECK(smoothed.at(y, 31));
      CHECK(smoothed.at(y, 24));
      CHECK_FALSE(smoothed.at(y, 20));
    }
  }
  SUBCASE("even kernels are rejected") {
    CropConfig bad;
    bad.morphology_kernel = 4;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}

// ---------------------------------------------------------------------------
// anterior points and crop detection
// ---------------------------------------------------------------------------

TEST_CASE("anterior offset points") {
  GuideSet g;
  g.orientation = Orientation::AnteriorRight;
  SUBCASE("horizontal guide extends along +x") {
    g.anterior_chain.push_back({{10.0, 0.0}, {0.0, 0.0}, GuideKind::Intra, 0});
    const auto pts = anterior_points_at_d(g, 5.0);
    REQUIRE(pts.size() == 1);
    CHECK(pts[0].x == doctest::Approx(15.0).epsilon(1e-14));
    CHECK(pts[0].y == doctest::Approx(0.0).epsilon(1e-14));
  }
  SUBCASE("45-degree guide steps diagonally") {
    g.anterior_chain.clear();
    g.anterior_chain.push_back({{5.0, 5.0}, {0.0, 0.0}, GuideKind::Intra, 0});
    const auto pts = anterior_points_at_d(g, std::sqrt(2.0));
    CHECK(pts[0].x == doctest::Approx(6.0).epsilon(1e-13));
    CHECK(pts[0].y == doctest::Approx(6.0).epsilon(1e-13));
  }
  SUBCASE("zero-length guides are rejected with their index") {
    g.anterior_chain.clear();
    g.anterior_chain.push_back({{3.0, 1.0}, {0.0, 1.0}, GuideKind::Intra, 0});
    g.anterior_chain.push_back({{2.0, 2.0}, {2.0, 2.0}, GuideKind::Intra, 1});
    try {
      anterior_points_at_d(g, 4.0);
      FAIL("expected a zero-length guide error");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("index 1") != std::string::npos);
    }
  }
  SUBCASE("non-positive distance rejected") {
    CHECK_THROWS_AS(anterior_points_at_d(g, 0.0), std::invalid_argument);
  }
}

TEST_CASE("probe distance formula") {
  LandmarkSet set = rect_spine(6, 30.0, 14.0, 40.0, 100.0, 60.0);
  CropConfig cfg;
  cfg.factor = 1.2;
  BlackRegionMask no_mask;
  no_mask.width = 512;
  no_mask.height = 1024;
  no_mask.mask.assign(static_cast<std::size_t>(512) * 1024, 0);
  const CropReport report =
      detect_crop(512, 1024, no_mask, set, cfg, Orientation::AnteriorRight);
  CHECK(report.probe_distance == doctest::Approx(1.2 * 31.0).epsilon(1e-14));
  CHECK_FALSE(report.cropped);
  CHECK(report.percent == 0.0);
}

TEST_CASE("crop attribution lands on the lowest vertebrae") {
  // Axis-aligned spine drifting anterior going down; every guide is
  // horizontal, so probe points are the anterior landmarks shifted by
  // d = 1.2 * (1 + 30) = 37.2. The 11 chain knots are collinear:
  // x(y) = 170.2 + 0.16 (y - 60), so the spline is that straight line and
  // crosses x = w - 1 = 199 at y = 240. Exactly the 3 inferior-most knots
  // (y = 260, 285, 310) sit outside the frame.
  const int w = 200, h = 400;
  LandmarkSet set;
  for (int i = 0; i < 6; ++i) {
    Vertebra v;
    v.label = vertebra_label(i, 6);
    const double cy = 60.0 + i * 50.0;
    const double cx = 118.0 + i * 8.0;
    v.center = {cx, cy};
    v.corner(CornerId::AnteriorSuperior) = {cx + 15, cy - 8};
    v.corner(CornerId::PosteriorSuperior) = {cx - 15, cy - 8};
    v.corner(CornerId::AnteriorInferior) = {cx + 15, cy + 8};
    v.corner(CornerId::PosteriorInferior) = {cx - 15, cy + 8};
    set.vertebrae.push_back(std::move(v));
  }
  CropConfig cfg;
  cfg.factor = 1.2;
  BlackRegionMask no_mask;
  no_mask.width = w;
  no_mask.height = h;
  no_mask.mask.assign(static_cast<std::size_t>(w) * h, 0);
  const CropReport report =
      detect_crop(w, h, no_mask, set, cfg, Orientation::AnteriorRight);
  REQUIRE(report.cropped);
  // samples are y_j = 60 + 250 j / 499; violations are y_j > 240, i.e.
  // j >= 360, which is 140 of the 500 samples
  CHECK(report.violations.size() == 140);
  CHECK(report.percent == doctest::Approx(28.0).epsilon(1e-12));
  for (const Violation& v : report.violations) {
    CHECK((v.level == "L4" || v.level == "L5"));
  }
}

TEST_CASE("violating set grows with the factor") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const int w = 220, h = 420;
    LandmarkSet set = rect_spine(6, rng.uniform(26, 34), 14.0, 52.0,
                                 w - rng.uniform(55.0, 95.0), 70.0);
    BlackRegionMask no_mask;
    no_mask.width = w;
    no_mask.height = h;
    no_mask.mask.assign(static_cast<std::size_t>(w) * h, 0);
    std::size_t prev = 0;
    bool prev_cropped = false;
    for (double factor = 0.8; factor < 1.55; factor += 0.1) {
      CropConfig cfg;
      cfg.factor = factor;
      const CropReport report =
          detect_crop(w, h, no_mask, set, cfg, Orientation::AnteriorRight);
      CHECK(report.violations.size() >= prev);
      if (prev_cropped) CHECK(report.cropped);
      prev = report.violations.size();
      prev_cropped = report.cropped;
      CHECK((report.percent == 0.0) == !report.cropped);
    }
  }
}

TEST_CASE("mask components strictly posterior to the spline change nothing") {
  const int w = 300, h = 400;
  LandmarkSet set = rect_spine(6, 30.0, 14.0, 50.0, 150.0, 65.0);
  CropConfig cfg;
  cfg.factor = 1.2;

  BlackRegionMask empty;
  empty.width = w;
  empty.height = h;
  empty.mask.assign(static_cast<std::size_t>(w) * h, 0);
  const CropReport base =
      detect_crop(w, h, empty, set, cfg, Orientation::AnteriorRight);

  // posterior band: far left of every spline sample
  BlackRegionMask posterior = empty;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < 40; ++x) {
      posterior.mask[static_cast<std::size_t>(y) * w + x] = 1;
    }
  }
  posterior.components.push_back({0, 0, 39, h - 1, 40 * h});
  const CropReport shifted =
      detect_crop(w, h, posterior, set, cfg, Orientation::AnteriorRight);
  CHECK(base.cropped == shifted.cropped);
  CHECK(base.percent == shifted.percent);
  CHECK(base.violations.size() == shifted.violations.size());
}

TEST_CASE("black-band violations are reported with their reason") {
  const int w = 300, h = 400;
  LandmarkSet set = rect_spine(6, 30.0, 14.0, 50.0, 180.0, 65.0);
  CropConfig cfg;
  cfg.factor = 1.2;
  // anterior band touching the right edge, tall enough to catch the spline
  BlackRegionMask band;
  band.width = w;
  band.height = h;
  band.mask.assign(static_cast<std::size_t>(w) * h, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 225; x < w; ++x) {
      band.mask[static_cast<std::size_t>(y) * w + x] = 1;
    }
  }
  band.components.push_back({225, 0, w - 1, h - 1, (w - 225) * h});
  const CropReport report =
      detect_crop(w, h, band, set, cfg, Orientation::AnteriorRight);
  REQUIRE(report.cropped);
  for (const Violation& v : report.violations) {
    CHECK(v.reason == ViolationReason::InBlackRegion);
  }
}

// ---------------------------------------------------------------------------
// sweep arithmetic and metrics
// ---------------------------------------------------------------------------

TEST_CASE("accuracy arithmetic on printed confusion rows") {
  CHECK(confusion_accuracy_percent({8, 0, 27, 35}) ==
        doctest::Approx(88.57).epsilon(1e-3));
  CHECK(confusion_accuracy_percent({1, 0, 34, 35}) ==
        doctest::Approx(98.57).epsilon(1e-3));
  CHECK(confusion_accuracy_percent({0, 0, 35, 35}) == 100.0);
}

TEST_CASE("classification metrics") {
  SUBCASE("perfect classifier") {
    const auto m = classification_metrics({0, 0, 35, 35});
    CHECK(*m.accuracy_percent == 100.0);
    CHECK(*m.sensitivity == 1.0);
    CHECK(*m.specificity == 1.0);
    CHECK(*m.f1 == 1.0);
  }
  SUBCASE("degenerate all-missed") {
    const auto m = classification_metrics({0, 5, 0, 5});
    CHECK(*m.sensitivity == 0.0);
    CHECK(*m.specificity == 1.0);
    CHECK(*m.f1 == 0.0);
  }
  SUBCASE("empty confusion reports absent metrics") {
    const auto m = classification_metrics({0, 0, 0, 0});
    CHECK_FALSE(m.accuracy_percent.has_value());
    CHECK_FALSE(m.sensitivity.has_value());
    CHECK_FALSE(m.specificity.has_value());
    CHECK_FALSE(m.f1.has_value());
  }
}

TEST_CASE("factor sweep classifies against labels and skips unlabeled rows") {
  const int w = 240, h = 420;
  std::vector<SweepEntry> entries;
  // cropped case: spine near the anterior edge
  SweepEntry cropped;
  cropped.id = "near-edge";
  cropped.image_w = w;
  cropped.image_h = h;
  cropped.mask.width = w;
  cropped.mask.height = h;
  cropped.mask.mask.assign(static_cast<std::size_t>(w) * h, 0);
  cropped.landmarks = rect_spine(6, 30.0, 14.0, 52.0, w - 40.0, 70.0);
  cropped.cropped_label = true;
  entries.push_back(cropped);
  // clean case: spine far from the edge
  SweepEntry clean = cropped;
  clean.id = "clean";
  clean.landmarks = rect_spine(6, 30.0, 14.0, 52.0, 80.0, 70.0);
  clean.cropped_label = false;
  entries.push_back(clean);
  // unlabeled case
  SweepEntry unlabeled = cropped;
  unlabeled.id = "unlabeled";
  unlabeled.cropped_label.reset();
  entries.push_back(unlabeled);

  CropConfig cfg;
  const auto result = factor_sweep(entries, {0.8, 1.2}, cfg,
                                   Orientation::AnteriorRight);
  REQUIRE(result.rows.size() == 2);
  REQUIRE(result.skipped.size() == 1);
  CHECK(result.skipped[0] == "unlabeled");
  for (const SweepRow& row : result.rows) {
    CHECK(row.counts.total() == 2);
    CHECK(row.accuracy_percent ==
          doctest::Approx(100.0 * (row.counts.tp + row.counts.tn) / 2.0));
  }
  // the near-edge spine is flagged at every factor
  CHECK(result.rows[0].counts.tp == 1);
  CHECK(result.rows[1].counts.tp == 1);
}
