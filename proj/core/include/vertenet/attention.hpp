// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vertenet/nn.hpp"
#include "vertenet/tensor.hpp"

namespace vertenet {

// Dual-resolution window geometry. The same window side p is used on the
// full-resolution branch and on the branch pooled by r, so one low-branch
// window covers an (r*p) x (r*p) region of the original map and the two
// branches overlap once merged.
struct WindowSpec {
  int p = 10;          // window side length, in cells of the branch it tiles
  int r = 2;           // pooling factor of the low branch
  int heads_high = 1;  // heads attending at full resolution
  int heads_low = 1;   // heads attending at pooled resolution
  int heads_total() const { return heads_high + heads_low; }
  void validate(int channels) const;
};

// Collects every attention matrix produced during a forward call; used by
// tests to assert row-stochasticity without re-deriving the matrices.
struct AttentionTrace {
  std::vector<Tensor> matrices;
};

// Projections and temperatures for one dual-resolution attention instance.
// High-branch tensors are undefined when heads_high == 0, and likewise for
// the low branch.
struct AttentionParams {
  Tensor wq_high, wk_high, wv_high;  // (heads_high*d, C, 1, 1)
  Tensor wq_low, wk_low, wv_low;     // (heads_low*d, C, 1, 1)
  Tensor beta_high_raw;              // (1, heads_high, 1, 1), softplus-reparameterized
  Tensor beta_low_raw;               // (1, heads_low, 1, 1)
  Tensor upsample_kernel;            // (heads_low*d, 1, r, r), per-channel transposed conv
  Tensor wp;                         // (C, C, 1, 1) output projection

  static AttentionParams init(int channels, const WindowSpec& spec, Rng& rng);
  void collect_into(const std::string& prefix, ParamMap& out) const;
};

struct GdfnParams {
  int gamma = 2;
  Tensor expand;    // (2*gamma*C, C, 1, 1)
  Tensor dwconv;    // (2*gamma*C, 1, 3, 3)
  Tensor contract;  // (C, gamma*C, 1, 1)

  static GdfnParams init(int channels, int gamma, Rng& rng);
  void collect_into(const std::string& prefix, ParamMap& out) const;
};

struct CsaParams {
  Tensor wq, wk, wv;  // (C, C, 1, 1)
  Tensor beta_raw;    // (1, 1, 1, 1)

  static CsaParams init(int channels, Rng& rng, double beta_init = 8.0);
  void collect_into(const std::string& prefix, ParamMap& out) const;
};

// Windowed self-attention at full resolution plus windowed self-attention on
// the avg-pooled map with the same window size, merged by a learnable
// transposed-conv upsample, channel concatenation and a 1x1 projection.
// Output shape equals the input shape.
Tensor drsa_forward(const Tensor& x, const AttentionParams& params,
                    const WindowSpec& spec, AttentionTrace* trace = nullptr);

// Cross variant: queries from x (and its pooled form), keys/values from y.
Tensor drca_forward(const Tensor& x, const Tensor& y,
                    const AttentionParams& params, const WindowSpec& spec,
                    AttentionTrace* trace = nullptr);

// Channel-wise self-attention: tokens are whole channels, the attention
// matrix is C x C, output shape equals input shape.
Tensor csa_forward(const Tensor& f, const CsaParams& params,
                   AttentionTrace* trace = nullptr);

// Gated depthwise-conv feed-forward: expand 1x1 -> depthwise 3x3 -> split
// into gate and content halves -> GELU(gate) * content -> contract 1x1.
Tensor gdfn_forward(const Tensor& f, const GdfnParams& params);

enum class BlockKind { Self, Cross };

// One transformer block: out = W_gdfn(GDFN(A)) + A where
// A = W_attn(Attn(x[, y])) + x. When normalize is set, layer normalization
// is applied to the attention and GDFN inputs (the residual adds always see
// the unnormalized carriers, so disabling it recovers the bare
// attention-plus-residual composition).
struct TransformerBlockParams {
  BlockKind kind = BlockKind::Self;
  WindowSpec spec;
  bool normalize = true;
  AttentionParams attn;
  Tensor w_attn;  // (C, C, 1, 1)
  GdfnParams gdfn;
  Tensor w_gdfn;  // (C, C, 1, 1)
  std::optional<LayerNormParams> ln_attn;  // on x
  std::optional<LayerNormParams> ln_ctx;   // on y, cross blocks only
  std::optional<LayerNormParams> ln_gdfn;

  static TransformerBlockParams init(BlockKind kind, int channels,
                                     const WindowSpec& spec, int gdfn_gamma,
                                     bool normalize, Rng& rng);
  void collect_into(const std::string& prefix, ParamMap& out) const;
};

Tensor transformer_block(const Tensor& x, const Tensor* y,
                         const TransformerBlockParams& params,
                         AttentionTrace* trace = nullptr);

// The channel-attention twin of transformer_block, used where concatenated
// feature maps need inter-channel mixing.
struct CsaBlockParams {
  bool normalize = true;
  CsaParams csa;
  Tensor w_attn;
  GdfnParams gdfn;
  Tensor w_gdfn;
  std::optional<LayerNormParams> ln_attn, ln_gdfn;

  static CsaBlockParams init(int channels, int gdfn_gamma, bool normalize,
                             Rng& rng);
  void collect_into(const std::string& prefix, ParamMap& out) const;
};

Tensor csa_transformer_block(const Tensor& f, const CsaBlockParams& params,
                             AttentionTrace* trace = nullptr);

}  // namespace vertenet
