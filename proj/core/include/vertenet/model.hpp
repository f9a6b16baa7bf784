// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vertenet/fusion.hpp"
#include "vertenet/geometry.hpp"
#include "vertenet/image.hpp"
#include "vertenet/nn.hpp"
#include "vertenet/tensor.hpp"

namespace vertenet {

// The four combinations of reduction factor and window size the decoder
// levels may use.
inline constexpr std::array<std::pair<int, int>, 4> kSupportedLevelGrid{
    {{2, 10}, {2, 20}, {4, 10}, {4, 20}}};

struct ModelConfig {
  // Encoder widths at strides 4, 8, 16, 32; decoder levels reuse them.
  std::array<int, 4> widths{16, 32, 64, 128};
  int gdfn_gamma = 2;
  int heads_high = 1;
  int heads_low = 1;
  bool normalize_blocks = true;
  // (r, p) per decoder level, shallow to deep: [0] -> level 2 (stride-4
  // output), [1] -> level 3, [2] -> level 4.
  std::array<std::pair<int, int>, 3> level_rp{{{2, 10}, {2, 10}, {2, 10}}};
  FusionMode fusion = FusionMode::Full;
  int head_stride = 4;
  int canonical_h = 1024;
  int canonical_w = 512;
  int vertebra_count = 6;

  void validate() const;
};

enum class CornerId : int {
  AnteriorSuperior = 0,
  PosteriorSuperior = 1,
  AnteriorInferior = 2,
  PosteriorInferior = 3,
};

inline constexpr std::array<const char*, 4> kCornerNames{
    "anterior_superior", "posterior_superior", "anterior_inferior",
    "posterior_inferior"};

std::string vertebra_label(int index, int count);  // T12, L1 ... L5 for 6

struct Vertebra {
  std::string label;
  Point center;
  std::array<Point, 4> corners;  // indexed by CornerId
  double confidence = 1.0;

  const Point& corner(CornerId id) const {
    return corners[static_cast<int>(id)];
  }
  Point& corner(CornerId id) { return corners[static_cast<int>(id)]; }
};

struct LandmarkSet {
  int image_width = 0;
  int image_height = 0;
  std::vector<Vertebra> vertebrae;  // superior to inferior
  bool complete = true;
};

// ---- network ----

struct EncoderParams {
  struct Stage {
    Tensor conv1_w;
    BatchNormParams bn1;
    Tensor conv2_w;
    BatchNormParams bn2;
  };
  Tensor stem_w;  // 7x7, stride 4
  BatchNormParams stem_bn;
  std::array<Stage, 3> stages;  // each halves the resolution

  static EncoderParams init(const ModelConfig& cfg, Rng& rng);
  void collect_into(const std::string& prefix, ParamMap& out) const;
};

struct MultiScaleFeatures {
  Tensor f1, f2, f3, f4;  // strides 4, 8, 16, 32
};

MultiScaleFeatures encoder_forward(const Tensor& image, EncoderParams& params,
                                   const ModelConfig& cfg,
                                   bool training = false);

struct HeadParams {
  Tensor conv_w;  // 3x3
  Tensor conv_b;
  Tensor out_w;  // 1x1
  Tensor out_b;
  static HeadParams init(int c_in, int c_out, Rng& rng,
                         double out_bias_init = 0.0);
  void collect_into(const std::string& prefix, ParamMap& out) const;
};

struct HeadOutputs {
  Tensor heatmap;        // (B, 1, H/s, W/s), sigmoid range
  Tensor center_offset;  // (B, 2, H/s, W/s), (dx, dy) cells
  Tensor corner_offset;  // (B, 8, H/s, W/s), four (dx, dy) pairs in CornerId order
};

struct VerteNetParams {
  EncoderParams encoder;
  // Decoder order of execution: [0] level 4 (deepest) -> [2] level 2.
  std::array<FusionLevelParams, 3> fusion_levels;
  HeadParams heatmap_head;
  HeadParams center_head;
  HeadParams corner_head;

  static VerteNetParams init(const ModelConfig& cfg, Rng& rng);
  // Every named tensor, learnable parameters and batch-norm buffers alike.
  ParamMap named_params() const;
  ParamMap trainable_params() const;
};

HeadOutputs vertenet_forward(const Tensor& image, VerteNetParams& params,
                             const ModelConfig& cfg, bool training = false,
                             AttentionTrace* trace = nullptr);

// ---- losses ----

// Penalty-reduced pixelwise focal loss against a Gaussian-splatted target,
// alpha = 2, beta = 4, normalized by the number of peak (== 1) cells.
Tensor focal_heatmap_loss(const Tensor& pred, const Tensor& target);

// Mean absolute error over the masked cells, all channels; empty mask -> 0.
Tensor offset_l1_loss(const Tensor& pred, const Tensor& target,
                      const Tensor& mask);

// ---- targets and decoding ----

struct RenderedTargets {
  Tensor heatmap;
  Tensor center_offset;
  Tensor corner_offset;
  Tensor peak_mask;  // (B, 1, H/s, W/s), 1 at every center cell
};

RenderedTargets render_targets(const std::vector<LandmarkSet>& landmarks,
                               const ModelConfig& cfg, int image_h,
                               int image_w);

LandmarkSet decode_landmarks(const HeadOutputs& outputs, const ModelConfig& cfg,
                             int image_h, int image_w, int batch_index = 0,
                             double peak_threshold = 0.1);

struct ErrorStats {
  double mean_px = 0.0;
  double median_px = 0.0;
};

// Corner errors pooled over corners, vertebrae and images, measured after
// mapping both sets into the canonical frame from cfg.
ErrorStats normalized_errors(const std::vector<LandmarkSet>& pred,
                             const std::vector<LandmarkSet>& gt,
                             const ModelConfig& cfg);

// ---- synthetic data ----

struct SynthOptions {
  int vertebra_count = 6;
  int band_left = 0;   // black side-band widths, 0 disables
  int band_right = 0;
  double band_value = 0.0;
};

struct SynthSample {
  GrayImage image;
  LandmarkSet landmarks;
};

std::vector<SynthSample> synth_generate(std::uint64_t seed, int count,
                                        int height, int width,
                                        const SynthOptions& options = {});

Tensor image_batch_tensor(const std::vector<SynthSample>& samples);

// ---- toy training ----

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int step_index, const std::string& what)
      : std::runtime_error(what), step(step_index) {}
  int step;
};

struct TrainOptions {
  int steps = 500;
  double lr = 1e-3;
  double momentum = 0.9;
  bool train_heatmap = true;  // false freezes that head's parameters
  bool train_center = true;
  bool train_corner = true;
};

struct TrainResult {
  // loss_curve[i] is the full-batch loss before update i;
  // loss_curve.back() is the loss after the final update.
  std::vector<double> loss_curve;
};

TrainResult toy_train(VerteNetParams& params, const ModelConfig& cfg,
                      const std::vector<SynthSample>& data,
                      const TrainOptions& options);

// Inference-mode mean corner error against the samples' ground truth, in
// native image pixels.
double mean_corner_error_px(VerteNetParams& params, const ModelConfig& cfg,
                            const std::vector<SynthSample>& data);

// ---- serialization ----
// Binary layout: "VNET" magic, u32 version, then per-tensor records of
// u32 name length, name bytes, u32 rank, rank u64 dims, float64 payload,
// little-endian throughout. The model configuration rides along as a
// reserved "__meta__" record.

void save_model(const std::filesystem::path& path,
                const VerteNetParams& params, const ModelConfig& cfg);
std::pair<VerteNetParams, ModelConfig> load_model(
    const std::filesystem::path& path);

}  // namespace vertenet
