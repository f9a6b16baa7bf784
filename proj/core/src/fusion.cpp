// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/fusion.hpp"

#include <stdexcept>

namespace vertenet {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_fusable(const Tensor& x_skip, const Tensor& x_dec) {
  require(x_skip.shape() == x_dec.shape(),
          "fusion: operand shapes differ, " + x_skip.shape().str() + " vs " +
              x_dec.shape().str());
}

}  // namespace

const char* fusion_mode_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::Simple:
      return "simple";
    case FusionMode::DrsaOnly:
      return "drsa-only";
    case FusionMode::DrcaOnly:
      return "drca-only";
    case FusionMode::Full:
      return "full";
  }
  return "full";
}

FusionMode fusion_mode_from_name(const std::string& name) {
  if (name == "simple") return FusionMode::Simple;
  if (name == "drsa-only") return FusionMode::DrsaOnly;
  if (name == "drca-only") return FusionMode::DrcaOnly;
  if (name == "full") return FusionMode::Full;
  throw std::invalid_argument("unknown fusion mode '" + name + "'");
}

DecoderUpsamplePathParams DecoderUpsamplePathParams::init(int c_in, int c_out,
                                                          Rng& rng) {
  DecoderUpsamplePathParams p;
  p.conv_w = init_conv_weight(c_out, c_in, 3, rng);
  p.conv_b = init_bias(c_out);
  return p;
}

void DecoderUpsamplePathParams::collect_into(const std::string& prefix,
                                             ParamMap& out) const {
  collect(out, prefix + ".conv_w", conv_w);
  collect(out, prefix + ".conv_b", conv_b);
}

Tensor decoder_upsample_path(const Tensor& x_lower,
                             const DecoderUpsamplePathParams& params) {
  Tensor up = bilinear_upsample(x_lower, 2);
  Tensor conv = conv2d_replicate(up, params.conv_w, 1, 1);
  return relu(add_bcast_c(conv, params.conv_b));
}

SimpleFuseParams SimpleFuseParams::init(int channels, int c_out, Rng& rng) {
  SimpleFuseParams p;
  p.conv_w = init_conv_weight(c_out, 2 * channels, 3, rng);
  p.conv_b = init_bias(c_out);
  return p;
}

void SimpleFuseParams::collect_into(const std::string& prefix,
                                    ParamMap& out) const {
  collect(out, prefix + ".conv_w", conv_w);
  collect(out, prefix + ".conv_b", conv_b);
}

Tensor simple_fuse(const Tensor& x_skip, const Tensor& x_dec,
                   const SimpleFuseParams& params) {
  check_fusable(x_skip, x_dec);
  Tensor cat = concat_c(x_skip, x_dec);
  Tensor conv = conv2d_replicate(cat, params.conv_w, 1, 1);
  return relu(add_bcast_c(conv, params.conv_b));
}

McfbParams McfbParams::init(FusionMode mode, int channels, int c_out,
                            const WindowSpec& spec, int gdfn_gamma,
                            bool normalize, Rng& rng) {
  require(mode != FusionMode::Simple,
          "McfbParams: the simple baseline has its own parameter struct");
  McfbParams p;
  p.mode = mode;
  if (mode == FusionMode::DrsaOnly || mode == FusionMode::Full) {
    p.self_skip = TransformerBlockParams::init(BlockKind::Self, channels, spec,
                                               gdfn_gamma, normalize, rng);
    p.self_dec = TransformerBlockParams::init(BlockKind::Self, channels, spec,
                                              gdfn_gamma, normalize, rng);
  }
  if (mode == FusionMode::DrcaOnly || mode == FusionMode::Full) {
    p.cross_sd = TransformerBlockParams::init(BlockKind::Cross, channels, spec,
                                              gdfn_gamma, normalize, rng);
    p.cross_ds = TransformerBlockParams::init(BlockKind::Cross, channels, spec,
                                              gdfn_gamma, normalize, rng);
  }
  p.w_r = Tensor::randn({2 * channels, 2 * channels, 1, 1}, rng,
                        1.0 / std::sqrt(2.0 * channels), true);
  p.csa_block = CsaBlockParams::init(2 * channels, gdfn_gamma, normalize, rng);
  p.w_c = init_conv_weight(c_out, 2 * channels, 3, rng);
  p.bn = BatchNormParams::init(c_out);
  return p;
}

void McfbParams::collect_into(const std::string& prefix, ParamMap& out) const {
  if (self_skip) self_skip->collect_into(prefix + ".self_skip", out);
  if (self_dec) self_dec->collect_into(prefix + ".self_dec", out);
  if (cross_sd) cross_sd->collect_into(prefix + ".cross_sd", out);
  if (cross_ds) cross_ds->collect_into(prefix + ".cross_ds", out);
  collect(out, prefix + ".w_r", w_r);
  csa_block.collect_into(prefix + ".csa_block", out);
  collect(out, prefix + ".w_c", w_c);
  bn.collect_into(prefix + ".bn", out);
}

Tensor mcfb_fuse(const Tensor& x_skip, const Tensor& x_dec, McfbParams& params,
                 bool training, AttentionTrace* trace) {
  check_fusable(x_skip, x_dec);

  Tensor f_s = params.self_skip
                   ? transformer_block(x_skip, nullptr, *params.self_skip, trace)
                   : x_skip;
  Tensor f_d = params.self_dec
                   ? transformer_block(x_dec, nullptr, *params.self_dec, trace)
                   : x_dec;

  Tensor f_sd =
      params.cross_sd ? transformer_block(f_s, &f_d, *params.cross_sd, trace)
                      : f_s;
  Tensor f_ds =
      params.cross_ds ? transformer_block(f_d, &f_s, *params.cross_ds, trace)
                      : f_d;

  Tensor f_c = pointwise_conv(concat_c(f_sd, f_ds), params.w_r);
  Tensor f_o = csa_transformer_block(f_c, params.csa_block, trace);
  Tensor conv = conv2d_replicate(f_o, params.w_c, 1, 1);
  return relu(batch_norm(conv, params.bn, training));
}

FusionLevelParams FusionLevelParams::init(FusionMode mode, int c_skip,
                                          int c_lower, int c_out,
                                          const WindowSpec& spec,
                                          int gdfn_gamma, bool normalize,
                                          Rng& rng) {
  FusionLevelParams p;
  p.mode = mode;
  p.up = DecoderUpsamplePathParams::init(c_lower, c_skip, rng);
  if (mode == FusionMode::Simple) {
    p.simple = SimpleFuseParams::init(c_skip, c_out, rng);
  } else {
    p.mcfb = McfbParams::init(mode, c_skip, c_out, spec, gdfn_gamma, normalize,
                              rng);
  }
  return p;
}

void FusionLevelParams::collect_into(const std::string& prefix,
                                     ParamMap& out) const {
  up.collect_into(prefix + ".up", out);
  if (mcfb) mcfb->collect_into(prefix + ".mcfb", out);
  if (simple) simple->collect_into(prefix + ".simple", out);
}

Tensor FusionLevelParams::fuse(const Tensor& x_skip, const Tensor& x_lower,
                               bool training, AttentionTrace* trace) {
  Tensor x_dec = decoder_upsample_path(x_lower, up);
  const Shape& ss = x_skip.shape();
  const Shape& ds = x_dec.shape();
  if (ss.h != ds.h || ss.w != ds.w) {
    throw std::invalid_argument(
        "fusion: skip map " + ss.str() +
        " does not spatially match the upsampled decoder map " + ds.str());
  }
  if (mode == FusionMode::Simple) return simple_fuse(x_skip, x_dec, *simple);
  return mcfb_fuse(x_skip, x_dec, *mcfb, training, trace);
}

}  // namespace vertenet
