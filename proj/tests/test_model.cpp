// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "vertenet/gradcheck.hpp"
#include "vertenet/model.hpp"

using namespace vertenet;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.widths = {4, 6, 8, 10};
  cfg.gdfn_gamma = 1;
  cfg.heads_high = 1;
  cfg.heads_low = 1;
  return cfg;
}

LandmarkSet grid_spine(int k, int image_w, int image_h, double cx, double y0,
                       double pitch, double vw = 28.0, double vh = 12.0) {
  LandmarkSet set;
  set.image_width = image_w;
  set.image_height = image_h;
  for (int i = 0; i < k; ++i) {
    Vertebra v;
    v.label = vertebra_label(i, k);
    const double cy = y0 + i * pitch;
    v.center = {cx, cy};
    v.corner(CornerId::AnteriorSuperior) = {cx + vw / 2, cy - vh / 2};
    v.corner(CornerId::PosteriorSuperior) = {cx - vw / 2, cy - vh / 2};
    v.corner(CornerId::AnteriorInferior) = {cx + vw / 2, cy + vh / 2};
    v.corner(CornerId::PosteriorInferior) = {cx - vw / 2, cy + vh / 2};
    set.vertebrae.push_back(std::move(v));
  }
  return set;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  // r=2, p=10 is the default at every decoder level
  for (const auto& [r, p] : ModelConfig{}.level_rp) {
    CHECK(r == 2);
    CHECK(p == 10);
  }
  SUBCASE("head split must divide the decoder widths") {
    cfg.widths = {5, 6, 8, 10};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("level (r, p) must come from the supported grid") {
    cfg.level_rp[1] = {3, 10};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.level_rp[1] = {2, 20};
    CHECK_NOTHROW(cfg.validate());
  }
}

TEST_CASE("encoder feature pyramid") {
  ModelConfig cfg = tiny_config();
  Rng rng(3);
  EncoderParams enc = EncoderParams::init(cfg, rng);
  Tensor image = Tensor::randn({1, 1, 256, 128}, rng, 0.3);
  const MultiScaleFeatures ms = encoder_forward(image, enc, cfg);
  CHECK(ms.f1.shape() == Shape{1, 4, 64, 32});
  CHECK(ms.f2.shape() == Shape{1, 6, 32, 16});
  CHECK(ms.f3.shape() == Shape{1, 8, 16, 8});
  CHECK(ms.f4.shape() == Shape{1, 10, 8, 4});

  CHECK_THROWS_AS(encoder_forward(Tensor::zeros({1, 1, 16, 64}), enc, cfg),
                  std::invalid_argument);
}

TEST_CASE("two-channel encoder passes gradcheck") {
  // Seed picked so no activation sits within eps of a ReLU kink; see the
  // note on the end-to-end checks in checks.cpp.
  ModelConfig cfg;
  cfg.widths = {2, 2, 2, 2};
  Rng rng(12);
  EncoderParams enc = EncoderParams::init(cfg, rng);
  Tensor image = Tensor::randn({1, 1, 64, 32}, rng, 0.5, true);
  for (int i = 0; i < 30; ++i) encoder_forward(image, enc, cfg, true);
  ParamMap pm;
  enc.collect_into("encoder", pm);
  std::vector<std::pair<std::string, Tensor>> points;
  for (auto& [n, t] : pm) {
    if (t.requires_grad()) points.emplace_back(n, t);
  }
  points.emplace_back("image", image);
  auto f = [&]() {
    const MultiScaleFeatures ms = encoder_forward(image, enc, cfg, false);
    return add(add(sum_all(ms.f1), sum_all(ms.f2)),
               add(sum_all(ms.f3), sum_all(ms.f4)));
  };
  const auto report = finite_diff_gradcheck(f, points);
  INFO("worst " << report.worst_tensor << " analytic " << report.worst_analytic
                << " numeric " << report.worst_numeric);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("full forward keeps the head contracts") {
  ModelConfig cfg = tiny_config();
  Rng rng(5);
  VerteNetParams params = VerteNetParams::init(cfg, rng);
  Tensor image = Tensor::randn({1, 1, 256, 128}, rng, 0.3);
  const HeadOutputs out = vertenet_forward(image, params, cfg);
  CHECK(out.heatmap.shape() == Shape{1, 1, 64, 32});
  CHECK(out.center_offset.shape() == Shape{1, 2, 64, 32});
  CHECK(out.corner_offset.shape() == Shape{1, 8, 64, 32});
  for (double v : out.heatmap.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("focal loss frozen values") {
  SUBCASE("single positive pixel at 0.5") {
    Tensor target = Tensor::from_vector({1, 1, 2, 2}, {1, 0, 0, 0});
    Tensor pred = Tensor::from_vector({1, 1, 2, 2}, {0.5, 0, 0, 0});
    const double loss = focal_heatmap_loss(pred, target).value();
    // -(0.5)^2 ln(0.5), the off-peak terms vanish at the clamp floor
    CHECK(loss ==
          doctest::Approx(-0.25 * std::log(0.5)).epsilon(1e-9));
  }
  SUBCASE("peak-count normalization") {
    Tensor t1 = Tensor::from_vector({1, 1, 2, 2}, {1, 0, 0, 0});
    Tensor p1 = Tensor::from_vector({1, 1, 2, 2}, {0.4, 0, 0, 0});
    const double l1 = focal_heatmap_loss(p1, t1).value();
    // a second peak predicted perfectly contributes nothing per pixel, but
    // the normalizer doubles, so the loss halves
    Tensor t2 = Tensor::from_vector({1, 1, 2, 2}, {1, 1, 0, 0});
    Tensor p2 = Tensor::from_vector({1, 1, 2, 2}, {0.4, 1.0, 0, 0});
    const double l2 = focal_heatmap_loss(p2, t2).value();
    CHECK(l2 == doctest::Approx(0.5 * l1).epsilon(1e-9));
    // a second peak at the same imperfect value doubles numerator and
    // normalizer alike
    Tensor p3 = Tensor::from_vector({1, 1, 2, 2}, {0.4, 0.4, 0, 0});
    CHECK(focal_heatmap_loss(p3, t2).value() ==
          doctest::Approx(l1).epsilon(1e-12));
  }
  SUBCASE("loss decreases monotonically toward the target") {
    Tensor target = Tensor::from_vector({1, 1, 2, 2}, {1, 0, 0, 0});
    double prev = std::numeric_limits<double>::infinity();
    for (double lam : {0.2, 0.4, 0.6, 0.8, 0.95, 0.999}) {
      std::vector<double> pv(4, 0.0);
      pv[0] = lam;  // walk the peak prediction toward 1
      const double loss =
          focal_heatmap_loss(Tensor::from_vector({1, 1, 2, 2}, pv), target)
              .value();
      CHECK(loss < prev);
      prev = loss;
    }
    CHECK(prev < 1e-5);
  }
  SUBCASE("out-of-range predictions are rejected") {
    Tensor target = Tensor::from_vector({1, 1, 1, 2}, {1, 0});
    Tensor bad = Tensor::from_vector({1, 1, 1, 2}, {1.2, 0});
    CHECK_THROWS_AS(focal_heatmap_loss(bad, target), std::invalid_argument);
  }
}

TEST_CASE("offset L1 loss") {
  Tensor mask = Tensor::from_vector({1, 1, 2, 2}, {1, 0, 0, 0});
  SUBCASE("zero at the target") {
    Tensor pred = Tensor::from_vector({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(offset_l1_loss(pred, pred, mask).value() == 0.0);
  }
  SUBCASE("mean over masked cells and channels") {
    Tensor pred = Tensor::from_vector({1, 2, 2, 2}, {3, 9, 9, 9, -1, 9, 9, 9});
    Tensor target = Tensor::zeros({1, 2, 2, 2});
    CHECK(offset_l1_loss(pred, target, mask).value() ==
          doctest::Approx(2.0).epsilon(1e-14));
  }
  SUBCASE("empty mask is defined as zero") {
    Tensor pred = Tensor::from_vector({1, 2, 2, 2}, {3, 9, 9, 9, -1, 9, 9, 9});
    Tensor none = Tensor::zeros({1, 1, 2, 2});
    CHECK(offset_l1_loss(pred, Tensor::zeros({1, 2, 2, 2}), none).value() ==
          0.0);
  }
}

TEST_CASE("target rendering") {
  ModelConfig cfg = tiny_config();
  SUBCASE("cell-centered landmark leaves a zero center offset") {
    LandmarkSet set = grid_spine(1, 128, 64, 50.0, 30.0, 40.0);
    // put the center exactly on a stride-4 cell corner-origin
    set.vertebrae[0].center = {48.0, 28.0};
    const auto t = render_targets({set}, cfg, 64, 128);
    const int cell_x = 12, cell_y = 7;
    CHECK(t.center_offset.at(0, 0, cell_y, cell_x) == 0.0);
    CHECK(t.center_offset.at(0, 1, cell_y, cell_x) == 0.0);
    CHECK(t.heatmap.at(0, 0, cell_y, cell_x) == 1.0);
    CHECK(t.peak_mask.at(0, 0, cell_y, cell_x) == 1.0);
  }
  SUBCASE("heatmap peaks at every center cell") {
    LandmarkSet set = grid_spine(6, 128, 256, 60.0, 40.0, 32.0);
    const auto t = render_targets({set}, cfg, 256, 128);
    for (const Vertebra& v : set.vertebrae) {
      const int ix = static_cast<int>(v.center.x / 4);
      const int iy = static_cast<int>(v.center.y / 4);
      CHECK(t.heatmap.at(0, 0, iy, ix) == 1.0);
    }
  }
  SUBCASE("out-of-bounds landmarks are rejected with the index") {
    LandmarkSet set = grid_spine(2, 128, 64, 50.0, 30.0, 20.0);
    set.vertebrae[1].corner(CornerId::AnteriorInferior).x = 500.0;
    try {
      render_targets({set}, cfg, 64, 128);
      FAIL("expected a bounds error");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("landmark 1") != std::string::npos);
    }
  }
}

TEST_CASE("decoding") {
  ModelConfig cfg = tiny_config();
  SUBCASE("delta heatmap decodes by the stated rule") {
    std::vector<double> hm(32 * 16, 0.0);
    hm[5 * 16 + 3] = 0.9;
    HeadOutputs out;
    out.heatmap = Tensor::from_vector({1, 1, 32, 16}, std::move(hm));
    out.center_offset = Tensor::zeros({1, 2, 32, 16});
    out.corner_offset = Tensor::zeros({1, 8, 32, 16});
    ModelConfig one = cfg;
    one.vertebra_count = 1;
    const LandmarkSet set = decode_landmarks(out, one, 128, 64);
    REQUIRE(set.vertebrae.size() == 1);
    CHECK(set.complete);
    CHECK(set.vertebrae[0].center.x == 12.0);
    CHECK(set.vertebrae[0].center.y == 20.0);
  }
  SUBCASE("adjacent cells suppress the weaker peak") {
    std::vector<double> hm(32 * 16, 0.0);
    hm[5 * 16 + 3] = 0.9;
    hm[5 * 16 + 4] = 0.8;
    HeadOutputs out;
    out.heatmap = Tensor::from_vector({1, 1, 32, 16}, std::move(hm));
    out.center_offset = Tensor::zeros({1, 2, 32, 16});
    out.corner_offset = Tensor::zeros({1, 8, 32, 16});
    ModelConfig two = cfg;
    two.vertebra_count = 2;
    const LandmarkSet set = decode_landmarks(out, two, 128, 64);
    CHECK(set.vertebrae.size() == 1);
    CHECK_FALSE(set.complete);
    CHECK(set.vertebrae[0].confidence == doctest::Approx(0.9));
  }
  SUBCASE("round trip is exact when the offsets are carried") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
      LandmarkSet set = grid_spine(6, 128, 256, 60.0 + rng.uniform(-8, 8),
                                   36.0 + rng.uniform(0, 4),
                                   34.0 + rng.uniform(-1, 1));
      for (Vertebra& v : set.vertebrae) {
        v.center.x += rng.uniform(-1.9, 1.9);
        v.center.y += rng.uniform(-1.9, 1.9);
        for (Point& c : v.corners) {
          c.x += rng.uniform(-1.5, 1.5);
          c.y += rng.uniform(-1.5, 1.5);
        }
        v.confidence = 1.0;
      }
      const auto targets = render_targets({set}, cfg, 256, 128);
      HeadOutputs as_outputs;
      as_outputs.heatmap = targets.heatmap;
      as_outputs.center_offset = targets.center_offset;
      as_outputs.corner_offset = targets.corner_offset;
      const LandmarkSet decoded = decode_landmarks(as_outputs, cfg, 256, 128);
      REQUIRE(decoded.vertebrae.size() == set.vertebrae.size());
      for (std::size_t i = 0; i < set.vertebrae.size(); ++i) {
        CHECK(std::fabs(decoded.vertebrae[i].center.x -
                        set.vertebrae[i].center.x) < 1e-9);
        CHECK(std::fabs(decoded.vertebrae[i].center.y -
                        set.vertebrae[i].center.y) < 1e-9);
        CHECK(decoded.vertebrae[i].label == set.vertebrae[i].label);
        for (int c = 0; c < 4; ++c) {
          CHECK(std::fabs(decoded.vertebrae[i].corners[c].x -
                          set.vertebrae[i].corners[c].x) < 1e-9);
          CHECK(std::fabs(decoded.vertebrae[i].corners[c].y -
                          set.vertebrae[i].corners[c].y) < 1e-9);
        }
      }
      // decoded vertebrae come out sorted by center y
      for (std::size_t i = 1; i < decoded.vertebrae.size(); ++i) {
        CHECK(decoded.vertebrae[i].center.y >
              decoded.vertebrae[i - 1].center.y);
      }
    }
  }
}

TEST_CASE("normalized errors") {
  ModelConfig cfg;  // canonical 1024x512
  SUBCASE("identical sets give zero") {
    auto gt = grid_spine(6, 512, 1024, 250.0, 150.0, 120.0);
    const auto stats = normalized_errors({gt}, {gt}, cfg);
    CHECK(stats.mean_px == 0.0);
    CHECK(stats.median_px == 0.0);
  }
  SUBCASE("a 3-4-5 displacement of every corner") {
    auto gt = grid_spine(1, 512, 1024, 250.0, 150.0, 120.0);
    auto pred = gt;
    for (Point& c : pred.vertebrae[0].corners) {
      c.x += 3.0;
      c.y += 4.0;
    }
    const auto stats = normalized_errors({pred}, {gt}, cfg);
    CHECK(stats.mean_px == doctest::Approx(5.0).epsilon(1e-13));
    CHECK(stats.median_px == doctest::Approx(5.0).epsilon(1e-13));
  }
  SUBCASE("coordinates are mapped into the canonical frame") {
    auto gt = grid_spine(1, 256, 512, 125.0, 75.0, 60.0, 14.0, 6.0);
    auto pred = gt;
    // 1 px in a 256-wide image is 2 canonical px
    for (Point& c : pred.vertebrae[0].corners) c.x += 1.0;
    const auto stats = normalized_errors({pred}, {gt}, cfg);
    CHECK(stats.mean_px == doctest::Approx(2.0).epsilon(1e-13));
  }
  SUBCASE("count mismatches are rejected") {
    auto a = grid_spine(6, 512, 1024, 250.0, 150.0, 120.0);
    auto b = grid_spine(5, 512, 1024, 250.0, 150.0, 120.0);
    CHECK_THROWS_AS(normalized_errors({a}, {b}, cfg), std::invalid_argument);
    CHECK_THROWS_AS(normalized_errors({a, a}, {a}, cfg), std::invalid_argument);
  }
}

TEST_CASE("synthetic data generation") {
  SUBCASE("fixed seed reproduces the dataset bit for bit") {
    const auto a = synth_generate(99, 3, 96, 64);
    const auto b = synth_generate(99, 3, 96, 64);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].image.pixels == b[i].image.pixels);
      REQUIRE(a[i].landmarks.vertebrae.size() ==
              b[i].landmarks.vertebrae.size());
      for (std::size_t v = 0; v < a[i].landmarks.vertebrae.size(); ++v) {
        CHECK(a[i].landmarks.vertebrae[v].center.x ==
              b[i].landmarks.vertebrae[v].center.x);
      }
    }
    const auto c = synth_generate(100, 3, 96, 64);
    CHECK(a[0].image.pixels != c[0].image.pixels);
  }
  SUBCASE("landmark invariants hold") {
    for (std::uint64_t seed : {1, 2, 3, 4}) {
      const auto data = synth_generate(seed, 4, 256, 128);
      for (const auto& sample : data) {
        REQUIRE(sample.landmarks.vertebrae.size() == 6);
        for (std::size_t i = 0; i < 6; ++i) {
          const Vertebra& v = sample.landmarks.vertebrae[i];
          if (i > 0) {
            CHECK(v.center.y >
                  sample.landmarks.vertebrae[i - 1].center.y);
          }
          for (const Point& c : v.corners) {
            CHECK(c.x >= 0.0);
            CHECK(c.x < 128.0);
            CHECK(c.y >= 0.0);
            CHECK(c.y < 256.0);
          }
        }
      }
    }
  }
  SUBCASE("side bands blank the requested columns") {
    SynthOptions opts;
    opts.band_right = 12;
    const auto data = synth_generate(7, 1, 96, 64, opts);
    for (int y = 0; y < 96; ++y) {
      for (int x = 52; x < 64; ++x) {
        CHECK(data[0].image.at(y, x) == 0.0);
      }
    }
  }
  SUBCASE("degenerate sizes are rejected") {
    CHECK_THROWS_AS(synth_generate(1, 1, 100, 64), std::invalid_argument);
    CHECK_THROWS_AS(synth_generate(1, 1, 0, 0), std::invalid_argument);
  }
}

TEST_CASE("toy training contracts") {
  ModelConfig cfg = tiny_config();
  const auto data = synth_generate(11, 2, 64, 64);
  SUBCASE("zero steps leave the parameters untouched") {
    Rng rng(23);
    VerteNetParams params = VerteNetParams::init(cfg, rng);
    const ParamMap before = params.named_params();
    std::vector<std::vector<double>> snapshot;
    for (auto& [n, t] : before) {
      snapshot.emplace_back(t.data().begin(), t.data().end());
    }
    TrainOptions opts;
    opts.steps = 0;
    const auto result = toy_train(params, cfg, data, opts);
    CHECK(result.loss_curve.size() == 1);
    const ParamMap after = params.named_params();
    for (std::size_t i = 0; i < after.size(); ++i) {
      const auto d = after[i].second.data();
      // batch-norm buffers move with the final loss evaluation; learnables
      // must not
      if (!after[i].second.requires_grad()) continue;
      CHECK(std::equal(d.begin(), d.end(), snapshot[i].begin()));
    }
  }
  SUBCASE("frozen heads stay bit-identical") {
    Rng rng(29);
    VerteNetParams params = VerteNetParams::init(cfg, rng);
    std::vector<double> corner_w(params.corner_head.out_w.data().begin(),
                                 params.corner_head.out_w.data().end());
    TrainOptions opts;
    opts.steps = 3;
    opts.lr = 1e-3;
    opts.train_corner = false;
    toy_train(params, cfg, data, opts);
    const auto d = params.corner_head.out_w.data();
    CHECK(std::equal(d.begin(), d.end(), corner_w.begin()));
    CHECK(params.corner_head.out_w.requires_grad());
  }
  SUBCASE("a short run lowers the loss") {
    Rng rng(31);
    VerteNetParams params = VerteNetParams::init(cfg, rng);
    TrainOptions opts;
    opts.steps = 20;
    opts.lr = 2e-3;
    const auto result = toy_train(params, cfg, data, opts);
    REQUIRE(result.loss_curve.size() == 21);
    CHECK(result.loss_curve.back() < result.loss_curve.front());
  }
  SUBCASE("divergence aborts with the step index") {
    Rng rng(37);
    VerteNetParams params = VerteNetParams::init(cfg, rng);
    TrainOptions opts;
    opts.steps = 60;
    opts.lr = 1e18;
    try {
      toy_train(params, cfg, data, opts);
      MESSAGE("run stayed finite; acceptable but unexpected at this rate");
    } catch (const TrainingDiverged& e) {
      CHECK(e.step >= 0);
      CHECK(e.step < 60);
    }
  }
}

TEST_CASE("model file round trip") {
  ModelConfig cfg = tiny_config();
  cfg.fusion = FusionMode::DrcaOnly;
  Rng rng(41);
  VerteNetParams params = VerteNetParams::init(cfg, rng);
  const auto path = std::filesystem::temp_directory_path() /
                    "vertenet_test_model.vnet";
  save_model(path, params, cfg);
  auto [loaded, loaded_cfg] = load_model(path);
  CHECK(loaded_cfg.fusion == FusionMode::DrcaOnly);
  CHECK(loaded_cfg.widths == cfg.widths);

  const ParamMap a = params.named_params();
  const ParamMap b = loaded.named_params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    const auto av = a[i].second.data();
    const auto bv = b[i].second.data();
    CHECK(std::equal(av.begin(), av.end(), bv.begin()));
  }
  std::filesystem::remove(path);

  SUBCASE("garbage files are refused") {
    const auto bad = std::filesystem::temp_directory_path() /
                     "vertenet_bad_model.vnet";
    {
      std::ofstream os(bad, std::ios::binary);
      os << "not a model";
    }
    CHECK_THROWS_AS(load_model(bad), std::runtime_error);
    std::filesystem::remove(bad);
  }
}
