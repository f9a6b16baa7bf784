// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/model.hpp"

#include <algorithm>
#include <cmath>

namespace vertenet {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

constexpr double kHeatmapBiasInit = -2.1972245773362196;  // sigmoid -> 0.1

}  // namespace

void ModelConfig::validate() const {
  for (int w : widths) {
    require(w >= 1, "ModelConfig: widths must be positive");
  }
  require(gdfn_gamma >= 1, "ModelConfig: gdfn_gamma must be >= 1");
  require(heads_high >= 0 && heads_low >= 0 && heads_high + heads_low >= 1,
          "ModelConfig: needs at least one attention head");
  const int heads = heads_high + heads_low;
  for (int i = 0; i < 3; ++i) {
    require(widths[i] % heads == 0,
            "ModelConfig: width " + std::to_string(widths[i]) +
                " at decoder level " + std::to_string(i + 2) +
                " not divisible by head count " + std::to_string(heads));
  }
  for (const auto& rp : level_rp) {
    const bool supported =
        std::find(kSupportedLevelGrid.begin(), kSupportedLevelGrid.end(), rp) !=
        kSupportedLevelGrid.end();
    require(supported, "ModelConfig: (r=" + std::to_string(rp.first) +
                           ", p=" + std::to_string(rp.second) +
                           ") is not in the supported level grid");
  }
  require(head_stride == 4, "ModelConfig: only head stride 4 is supported");
  require(canonical_h > 0 && canonical_w > 0,
          "ModelConfig: canonical frame must be positive");
  require(vertebra_count >= 1, "ModelConfig: vertebra_count must be >= 1");
}

std::string vertebra_label(int index, int count) {
  static constexpr std::array<const char*, 6> kLumbarRun{"T12", "L1", "L2",
                                                         "L3", "L4", "L5"};
  if (count == 6 && index >= 0 && index < 6) return kLumbarRun[index];
  return "V" + std::to_string(index + 1);
}

// ---------------------------------------------------------------------------
// encoder
// ---------------------------------------------------------------------------

EncoderParams EncoderParams::init(const ModelConfig& cfg, Rng& rng) {
  EncoderParams p;
  p.stem_w = init_conv_weight(cfg.widths[0], 1, 7, rng);
  p.stem_bn = BatchNormParams::init(cfg.widths[0]);
  for (int i = 0; i < 3; ++i) {
    const int c_in = cfg.widths[i];
    const int c_out = cfg.widths[i + 1];
    p.stages[i].conv1_w = init_conv_weight(c_out, c_in, 3, rng);
    p.stages[i].bn1 = BatchNormParams::init(c_out);
    p.stages[i].conv2_w = init_conv_weight(c_out, c_out, 3, rng);
    p.stages[i].bn2 = BatchNormParams::init(c_out);
  }
  return p;
}

void EncoderParams::collect_into(const std::string& prefix,
                                 ParamMap& out) const {
  collect(out, prefix + ".stem_w", stem_w);
  stem_bn.collect_into(prefix + ".stem_bn", out);
  for (int i = 0; i < 3; ++i) {
    const std::string sp = prefix + ".stage" + std::to_string(i + 1);
    collect(out, sp + ".conv1_w", stages[i].conv1_w);
    stages[i].bn1.collect_into(sp + ".bn1", out);
    collect(out, sp + ".conv2_w", stages[i].conv2_w);
    stages[i].bn2.collect_into(sp + ".bn2", out);
  }
}

MultiScaleFeatures encoder_forward(const Tensor& image, EncoderParams& params,
                                   const ModelConfig& cfg, bool training) {
  const Shape& s = image.shape();
  require(s.c == 1, "encoder_forward: expected a single-channel image, got " +
                        s.str());
  require(s.h >= 32 && s.w >= 32,
          "encoder_forward: input " + s.str() + " is smaller than 32 px");

  Tensor x = image;
  const int pad_h = (32 - s.h % 32) % 32;
  const int pad_w = (32 - s.w % 32) % 32;
  x = replicate_pad(x, 0, pad_h, 0, pad_w);

  MultiScaleFeatures ms;
  Tensor stem = conv2d_replicate(x, params.stem_w, 4, 3);
  ms.f1 = relu(batch_norm(stem, params.stem_bn, training));
  Tensor cur = ms.f1;
  std::array<Tensor*, 3> outs{&ms.f2, &ms.f3, &ms.f4};
  for (int i = 0; i < 3; ++i) {
    auto& st = params.stages[i];
    Tensor a = relu(batch_norm(conv2d_replicate(cur, st.conv1_w, 2, 1), st.bn1,
                               training));
    Tensor b = relu(batch_norm(conv2d_replicate(a, st.conv2_w, 1, 1), st.bn2,
                               training));
    *outs[i] = b;
    cur = b;
  }
  return ms;
}

// ---------------------------------------------------------------------------
// heads and the full network
// ---------------------------------------------------------------------------

HeadParams HeadParams::init(int c_in, int c_out, Rng& rng,
                            double out_bias_init) {
  HeadParams p;
  p.conv_w = init_conv_weight(c_in, c_in, 3, rng);
  p.conv_b = init_bias(c_in);
  p.out_w = Tensor::randn({c_out, c_in, 1, 1}, rng, 1.0 / std::sqrt(c_in),
                          true);
  p.out_b = Tensor::full({1, c_out, 1, 1}, out_bias_init, true);
  return p;
}

void HeadParams::collect_into(const std::string& prefix, ParamMap& out) const {
  collect(out, prefix + ".conv_w", conv_w);
  collect(out, prefix + ".conv_b", conv_b);
  collect(out, prefix + ".out_w", out_w);
  collect(out, prefix + ".out_b", out_b);
}

namespace {

Tensor head_forward(const Tensor& x, const HeadParams& p) {
  Tensor a = relu(add_bcast_c(conv2d_replicate(x, p.conv_w, 1, 1), p.conv_b));
  return add_bcast_c(pointwise_conv(a, p.out_w), p.out_b);
}

WindowSpec level_spec(const ModelConfig& cfg, int level_index_0_is_shallow) {
  const auto [r, p] = cfg.level_rp[level_index_0_is_shallow];
  return WindowSpec{p, r, cfg.heads_high, cfg.heads_low};
}

}  // namespace

VerteNetParams VerteNetParams::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  VerteNetParams p;
  p.encoder = EncoderParams::init(cfg, rng);
  // Deepest level first: fuse f3 with upsampled f4, and so on upward.
  for (int i = 0; i < 3; ++i) {
    const int skip_stage = 2 - i;  // widths index of the skip map
    const int level_rp_index = 2 - i;
    p.fusion_levels[i] = FusionLevelParams::init(
        cfg.fusion, cfg.widths[skip_stage], cfg.widths[skip_stage + 1],
        cfg.widths[skip_stage], level_spec(cfg, level_rp_index),
        cfg.gdfn_gamma, cfg.normalize_blocks, rng);
  }
  p.heatmap_head = HeadParams::init(cfg.widths[0], 1, rng, kHeatmapBiasInit);
  p.center_head = HeadParams::init(cfg.widths[0], 2, rng);
  p.corner_head = HeadParams::init(cfg.widths[0], 8, rng);
  return p;
}

ParamMap VerteNetParams::named_params() const {
  ParamMap out;
  encoder.collect_into("encoder", out);
  static constexpr std::array<const char*, 3> kLevels{"level4", "level3",
                                                      "level2"};
  for (int i = 0; i < 3; ++i) {
    fusion_levels[i].collect_into(std::string("decoder.") + kLevels[i], out);
  }
  heatmap_head.collect_into("head.heatmap", out);
  center_head.collect_into("head.center", out);
  corner_head.collect_into("head.corner", out);
  return out;
}

ParamMap VerteNetParams::trainable_params() const {
  ParamMap all = named_params();
  ParamMap out;
  for (auto& [name, t] : all) {
    if (t.requires_grad()) out.emplace_back(name, t);
  }
  return out;
}

HeadOutputs vertenet_forward(const Tensor& image, VerteNetParams& params,
                             const ModelConfig& cfg, bool training,
                             AttentionTrace* trace) {
  MultiScaleFeatures ms = encoder_forward(image, params.encoder, cfg, training);
  Tensor d = ms.f4;
  d = params.fusion_levels[0].fuse(ms.f3, d, training, trace);
  d = params.fusion_levels[1].fuse(ms.f2, d, training, trace);
  d = params.fusion_levels[2].fuse(ms.f1, d, training, trace);

  HeadOutputs out;
  out.heatmap = sigmoid(head_forward(d, params.heatmap_head));
  out.center_offset = head_forward(d, params.center_head);
  out.corner_offset = head_forward(d, params.corner_head);
  return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Tensor focal_heatmap_loss(const Tensor& pred, const Tensor& target) {
  require(pred.shape() == target.shape(),
          "focal_heatmap_loss: shape mismatch " + pred.shape().str() + " vs " +
              target.shape().str());
  for (double v : pred.data()) {
    require(v >= 0.0 && v <= 1.0,
            "focal_heatmap_loss: prediction outside [0, 1]");
  }

  const auto tv = target.data();
  std::vector<double> pos_mask(tv.size()), neg_weight(tv.size());
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < tv.size(); ++i) {
    require(tv[i] >= 0.0 && tv[i] <= 1.0,
            "focal_heatmap_loss: target outside [0, 1]");
    if (tv[i] == 1.0) {
      pos_mask[i] = 1.0;
      neg_weight[i] = 0.0;
      ++n_pos;
    } else {
      pos_mask[i] = 0.0;
      const double one_minus = 1.0 - tv[i];
      neg_weight[i] = one_minus * one_minus * one_minus * one_minus;
    }
  }
  Tensor pos = Tensor::from_vector(pred.shape(), std::move(pos_mask));
  Tensor negw = Tensor::from_vector(pred.shape(), std::move(neg_weight));

  const double guard = 1e-7;
  Tensor p = clamp(pred, guard, 1.0 - guard);
  Tensor one_minus_p = add_scalar(scale(p, -1.0), 1.0);
  Tensor pos_term = mul(pos, mul(pow_const(one_minus_p, 2.0), elem_log(p)));
  Tensor neg_term =
      mul(negw, mul(pow_const(p, 2.0), elem_log(one_minus_p)));
  const double norm = static_cast<double>(std::max<std::size_t>(1, n_pos));
  return scale(sum_all(add(pos_term, neg_term)), -1.0 / norm);
}

Tensor offset_l1_loss(const Tensor& pred, const Tensor& target,
                      const Tensor& mask) {
  require(pred.shape() == target.shape(),
          "offset_l1_loss: shape mismatch " + pred.shape().str() + " vs " +
              target.shape().str());
  const Shape& ms = mask.shape();
  require(ms.b == pred.shape().b && ms.c == 1 && ms.h == pred.shape().h &&
              ms.w == pred.shape().w,
          "offset_l1_loss: mask shape " + ms.str() + " does not match " +
              pred.shape().str());
  double nnz = 0.0;
  for (double v : mask.data()) nnz += v;
  if (nnz == 0.0) return Tensor::scalar(0.0);
  Tensor masked = mul_bcast_plane(elem_abs(sub(pred, target)), mask);
  return scale(sum_all(masked), 1.0 / (nnz * pred.shape().c));
}

// ---------------------------------------------------------------------------
// target rendering and decoding
// ---------------------------------------------------------------------------

RenderedTargets render_targets(const std::vector<LandmarkSet>& landmarks,
                               const ModelConfig& cfg, int image_h,
                               int image_w) {
  const int s = cfg.head_stride;
  require(!landmarks.empty(), "render_targets: empty batch");
  require(image_h % s == 0 && image_w % s == 0,
          "render_targets: image dims must be divisible by the head stride");
  const int hs = image_h / s;
  const int ws = image_w / s;
  const int batch = static_cast<int>(landmarks.size());

  std::vector<double> hm(static_cast<std::size_t>(batch) * hs * ws, 0.0);
  std::vector<double> cen(static_cast<std::size_t>(batch) * 2 * hs * ws, 0.0);
  std::vector<double> cor(static_cast<std::size_t>(batch) * 8 * hs * ws, 0.0);
  std::vector<double> mask(static_cast<std::size_t>(batch) * hs * ws, 0.0);

  auto plane_index = [hs, ws](int y, int x) {
    return static_cast<std::size_t>(y) * ws + x;
  };

  for (int b = 0; b < batch; ++b) {
    const auto& set = landmarks[b];
    for (std::size_t vi = 0; vi < set.vertebrae.size(); ++vi) {
      const Vertebra& v = set.vertebrae[vi];
      auto in_bounds = [&](const Point& pt) {
        return pt.x >= 0.0 && pt.x < image_w && pt.y >= 0.0 && pt.y < image_h;
      };
      bool ok = in_bounds(v.center);
      for (const Point& c : v.corners) ok = ok && in_bounds(c);
      require(ok, "render_targets: landmark " + std::to_string(vi) +
                      " out of image bounds");

      const int ix = static_cast<int>(std::floor(v.center.x / s));
      const int iy = static_cast<int>(std::floor(v.center.y / s));

      const double side =
          0.25 *
          (distance(v.corner(CornerId::AnteriorSuperior),
                    v.corner(CornerId::PosteriorSuperior)) +
           distance(v.corner(CornerId::AnteriorInferior),
                    v.corner(CornerId::PosteriorInferior)) +
           distance(v.corner(CornerId::AnteriorSuperior),
                    v.corner(CornerId::AnteriorInferior)) +
           distance(v.corner(CornerId::PosteriorSuperior),
                    v.corner(CornerId::PosteriorInferior)));
      const double sigma = std::max(1.0, side / s / 6.0);
      const int radius = static_cast<int>(std::ceil(3.0 * sigma));
      const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

      double* hm_b = hm.data() + static_cast<std::size_t>(b) * hs * ws;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int y = iy + dy;
        if (y < 0 || y >= hs) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          const int x = ix + dx;
          if (x < 0 || x >= ws) continue;
          const double val = std::exp(-(dx * dx + dy * dy) * inv2s2);
          hm_b[plane_index(y, x)] = std::max(hm_b[plane_index(y, x)], val);
        }
      }

      const std::size_t cell = plane_index(iy, ix);
      mask[static_cast<std::size_t>(b) * hs * ws + cell] = 1.0;
      double* cen_b = cen.data() + static_cast<std::size_t>(b) * 2 * hs * ws;
      cen_b[cell] = v.center.x / s - ix;
      cen_b[static_cast<std::size_t>(hs) * ws + cell] = v.center.y / s - iy;
      double* cor_b = cor.data() + static_cast<std::size_t>(b) * 8 * hs * ws;
      for (int k = 0; k < 4; ++k) {
        const Point d = v.corners[k] - v.center;
        cor_b[(2 * k) * static_cast<std::size_t>(hs) * ws + cell] = d.x / s;
        cor_b[(2 * k + 1) * static_cast<std::size_t>(hs) * ws + cell] = d.y / s;
      }
    }
  }

  RenderedTargets t;
  t.heatmap = Tensor::from_vector({batch, 1, hs, ws}, std::move(hm));
  t.center_offset = Tensor::from_vector({batch, 2, hs, ws}, std::move(cen));
  t.corner_offset = Tensor::from_vector({batch, 8, hs, ws}, std::move(cor));
  t.peak_mask = Tensor::from_vector({batch, 1, hs, ws}, std::move(mask));
  return t;
}

LandmarkSet decode_landmarks(const HeadOutputs& outputs, const ModelConfig& cfg,
                             int image_h, int image_w, int batch_index,
                             double peak_threshold) {
  const Shape& hs = outputs.heatmap.shape();
  require(batch_index >= 0 && batch_index < hs.b,
          "decode_landmarks: batch index out of range");
  const int gh = hs.h, gw = hs.w;
  const int s = cfg.head_stride;
  const auto hm = outputs.heatmap.data();
  const std::size_t base = static_cast<std::size_t>(batch_index) * hs.c * gh * gw;

  struct Peak {
    int x, y;
    double val;
  };
  std::vector<Peak> peaks;
  auto value_at = [&](int y, int x) {
    return hm[base + static_cast<std::size_t>(y) * gw + x];
  };
  for (int y = 0; y < gh; ++y) {
    for (int x = 0; x < gw; ++x) {
      const double v = value_at(y, x);
      if (v <= peak_threshold) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= gh || nx < 0 || nx >= gw) continue;
          if (value_at(ny, nx) > v) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) peaks.push_back({x, y, v});
    }
  }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.val != b.val) return a.val > b.val;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });

  const int k = cfg.vertebra_count;
  LandmarkSet set;
  set.image_width = image_w;
  set.image_height = image_h;
  set.complete = static_cast<int>(peaks.size()) >= k;
  const int take = std::min<int>(k, static_cast<int>(peaks.size()));

  const auto cen = outputs.center_offset.data();
  const auto cor = outputs.corner_offset.data();
  const std::size_t plane = static_cast<std::size_t>(gh) * gw;
  const std::size_t cen_base = static_cast<std::size_t>(batch_index) * 2 * plane;
  const std::size_t cor_base = static_cast<std::size_t>(batch_index) * 8 * plane;

  for (int i = 0; i < take; ++i) {
    const Peak& p = peaks[i];
    const std::size_t cell = static_cast<std::size_t>(p.y) * gw + p.x;
    Vertebra v;
    v.confidence = p.val;
    v.center.x = (p.x + cen[cen_base + cell]) * s;
    v.center.y = (p.y + cen[cen_base + plane + cell]) * s;
    for (int c = 0; c < 4; ++c) {
      v.corners[c].x = v.center.x + cor[cor_base + (2 * c) * plane + cell] * s;
      v.corners[c].y =
          v.center.y + cor[cor_base + (2 * c + 1) * plane + cell] * s;
    }
    set.vertebrae.push_back(std::move(v));
  }
  std::sort(set.vertebrae.begin(), set.vertebrae.end(),
            [](const Vertebra& a, const Vertebra& b) {
              return a.center.y < b.center.y;
            });
  for (std::size_t i = 0; i < set.vertebrae.size(); ++i) {
    set.vertebrae[i].label = vertebra_label(static_cast<int>(i), k);
  }
  return set;
}

ErrorStats normalized_errors(const std::vector<LandmarkSet>& pred,
                             const std::vector<LandmarkSet>& gt,
                             const ModelConfig& cfg) {
  require(pred.size() == gt.size(),
          "normalized_errors: image count mismatch, " +
              std::to_string(pred.size()) + " vs " + std::to_string(gt.size()));
  std::vector<double> dists;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto& a = pred[i];
    const auto& b = gt[i];
    require(a.vertebrae.size() == b.vertebrae.size(),
            "normalized_errors: vertebra count mismatch at image " +
                std::to_string(i));
    const double sxa = static_cast<double>(cfg.canonical_w) / a.image_width;
    const double sya = static_cast<double>(cfg.canonical_h) / a.image_height;
    const double sxb = static_cast<double>(cfg.canonical_w) / b.image_width;
    const double syb = static_cast<double>(cfg.canonical_h) / b.image_height;
    for (std::size_t v = 0; v < a.vertebrae.size(); ++v) {
      for (int c = 0; c < 4; ++c) {
        const Point& pa = a.vertebrae[v].corners[c];
        const Point& pb = b.vertebrae[v].corners[c];
        const double dx = pa.x * sxa - pb.x * sxb;
        const double dy = pa.y * sya - pb.y * syb;
        dists.push_back(std::hypot(dx, dy));
      }
    }
  }
  require(!dists.empty(), "normalized_errors: no corners to compare");
  ErrorStats stats;
  double total = 0.0;
  for (double d : dists) total += d;
  stats.mean_px = total / dists.size();
  std::sort(dists.begin(), dists.end());
  const std::size_t n = dists.size();
  stats.median_px = (n % 2 == 1) ? dists[n / 2]
                                 : 0.5 * (dists[n / 2 - 1] + dists[n / 2]);
  return stats;
}

}  // namespace vertenet
