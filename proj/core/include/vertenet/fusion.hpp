// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "vertenet/attention.hpp"
#include "vertenet/nn.hpp"
#include "vertenet/tensor.hpp"

namespace vertenet {

// Decoder fusion variants. Simple is plain concat+conv; DrsaOnly keeps the
// two self-attention blocks and skips the cross pair; DrcaOnly does the
// opposite; Full runs both pairs plus the channel-attention block.
enum class FusionMode { Simple, DrsaOnly, DrcaOnly, Full };

const char* fusion_mode_name(FusionMode mode);
FusionMode fusion_mode_from_name(const std::string& name);

// Bilinear x2 upsample -> 3x3 conv -> ReLU, aligning the coarser decoder map
// with the skip map's resolution and channel width.
struct DecoderUpsamplePathParams {
  Tensor conv_w;  // (c_out, c_in, 3, 3)
  Tensor conv_b;  // (1, c_out, 1, 1)
  static DecoderUpsamplePathParams init(int c_in, int c_out, Rng& rng);
  void collect_into(const std::string& prefix, ParamMap& out) const;
};

Tensor decoder_upsample_path(const Tensor& x_lower,
                             const DecoderUpsamplePathParams& params);

struct SimpleFuseParams {
  Tensor conv_w;  // (c_out, 2C, 3, 3)
  Tensor conv_b;
  static SimpleFuseParams init(int channels, int c_out, Rng& rng);
  void collect_into(const std::string& prefix, ParamMap& out) const;
};

Tensor simple_fuse(const Tensor& x_skip, const Tensor& x_dec,
                   const SimpleFuseParams& params);

// The multi-context fusion block: per-input self-attention transformer
// blocks, a pair of cross-attention blocks exchanging queries and contexts,
// channel concatenation through w_r, a channel-attention transformer block,
// and a final 3x3 conv + batch norm + ReLU down to c_out.
struct McfbParams {
  FusionMode mode = FusionMode::Full;  // never Simple
  std::optional<TransformerBlockParams> self_skip, self_dec;
  std::optional<TransformerBlockParams> cross_sd, cross_ds;
  Tensor w_r;  // (2C, 2C, 1, 1)
  CsaBlockParams csa_block;
  Tensor w_c;  // (c_out, 2C, 3, 3)
  BatchNormParams bn;

  static McfbParams init(FusionMode mode, int channels, int c_out,
                         const WindowSpec& spec, int gdfn_gamma,
                         bool normalize, Rng& rng);
  void collect_into(const std::string& prefix, ParamMap& out) const;
};

Tensor mcfb_fuse(const Tensor& x_skip, const Tensor& x_dec, McfbParams& params,
                 bool training = false, AttentionTrace* trace = nullptr);

// One decoder level: the upsample path plus either an MCFB or the simple
// baseline, selected by mode.
struct FusionLevelParams {
  FusionMode mode = FusionMode::Full;
  DecoderUpsamplePathParams up;
  std::optional<McfbParams> mcfb;
  std::optional<SimpleFuseParams> simple;

  static FusionLevelParams init(FusionMode mode, int c_skip, int c_lower,
                                int c_out, const WindowSpec& spec,
                                int gdfn_gamma, bool normalize, Rng& rng);
  void collect_into(const std::string& prefix, ParamMap& out) const;

  // Upsamples x_lower to x_skip's resolution and fuses.
  Tensor fuse(const Tensor& x_skip, const Tensor& x_lower, bool training,
              AttentionTrace* trace = nullptr);
};

}  // namespace vertenet
