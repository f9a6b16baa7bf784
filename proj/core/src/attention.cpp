// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace vertenet {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Tensor init_projection(int c_out, int c_in, Rng& rng) {
  return Tensor::randn({c_out, c_in, 1, 1}, rng, 1.0 / std::sqrt(c_in), true);
}

Tensor init_beta_raw(int heads, double value) {
  return Tensor::full({1, heads, 1, 1}, softplus_inverse(value), true);
}

// Windowed multi-head attention over one resolution. All three maps carry
// heads*d channels; tokens are window cells.
Tensor windowed_attention(const Tensor& q_map, const Tensor& k_map,
                          const Tensor& v_map, int p, int heads,
                          const Tensor& beta_raw, AttentionTrace* trace) {
  auto [qw, grid] = window_partition(q_map, p);
  auto [kw, kgrid] = window_partition(k_map, p);
  auto [vw, vgrid] = window_partition(v_map, p);
  (void)kgrid;
  (void)vgrid;
  Tensor tq = tokens_from_windows(qw, heads);
  Tensor tk = tokens_from_windows(kw, heads);
  Tensor tv = tokens_from_windows(vw, heads);
  Tensor scores = matmul(tq, transpose_hw(tk));
  Tensor attn = softmax_rows(scores, add_scalar(softplus(beta_raw), 1e-12));
  if (trace) trace->matrices.push_back(attn);
  Tensor out = windows_from_tokens(matmul(attn, tv), p);
  return window_merge(out, grid);
}

// Shared dual-resolution core: queries from xq, keys/values from xkv.
Tensor dual_resolution_attention(const Tensor& xq, const Tensor& xkv,
                                 const AttentionParams& params,
                                 const WindowSpec& spec,
                                 AttentionTrace* trace) {
  const Shape& s = xq.shape();
  spec.validate(s.c);

  Tensor high, low;
  if (spec.heads_high > 0) {
    Tensor q = pointwise_conv(xq, params.wq_high);
    Tensor k = pointwise_conv(xkv, params.wk_high);
    Tensor v = pointwise_conv(xkv, params.wv_high);
    high = windowed_attention(q, k, v, spec.p, spec.heads_high,
                              params.beta_high_raw, trace);
  }
  if (spec.heads_low > 0) {
    Tensor xq_pooled = avg_pool2d(xq, spec.r);
    Tensor xkv_pooled = avg_pool2d(xkv, spec.r);
    Tensor q = pointwise_conv(xq_pooled, params.wq_low);
    Tensor k = pointwise_conv(xkv_pooled, params.wk_low);
    Tensor v = pointwise_conv(xkv_pooled, params.wv_low);
    Tensor pooled_attn = windowed_attention(q, k, v, spec.p, spec.heads_low,
                                            params.beta_low_raw, trace);
    Tensor up = transposed_conv_upsample(pooled_attn, spec.r,
                                         params.upsample_kernel,
                                         pooled_attn.shape().c);
    low = crop_spatial(up, 0, 0, s.h, s.w);
  }

  Tensor merged;
  if (high.defined() && low.defined()) {
    merged = concat_c(high, low);
  } else if (high.defined()) {
    merged = high;
  } else {
    merged = low;
  }
  return pointwise_conv(merged, params.wp);
}

Tensor apply_ln(const Tensor& x, const std::optional<LayerNormParams>& ln) {
  return ln ? layer_norm_channels(x, *ln) : x;
}

}  // namespace

void WindowSpec::validate(int channels) const {
  require(p >= 1, "WindowSpec: window size must be >= 1, got " +
                      std::to_string(p));
  require(r >= 1, "WindowSpec: reduction factor must be >= 1, got " +
                      std::to_string(r));
  require(heads_high >= 0 && heads_low >= 0 && heads_total() >= 1,
          "WindowSpec: needs at least one head");
  require(channels % heads_total() == 0,
          "WindowSpec: channels " + std::to_string(channels) +
              " not divisible by head count " + std::to_string(heads_total()));
}

AttentionParams AttentionParams::init(int channels, const WindowSpec& spec,
                                      Rng& rng) {
  spec.validate(channels);
  const int d = channels / spec.heads_total();
  const double beta0 = std::sqrt(static_cast<double>(d));
  AttentionParams p;
  if (spec.heads_high > 0) {
    const int ch = spec.heads_high * d;
    p.wq_high = init_projection(ch, channels, rng);
    p.wk_high = init_projection(ch, channels, rng);
    p.wv_high = init_projection(ch, channels, rng);
    p.beta_high_raw = init_beta_raw(spec.heads_high, beta0);
  }
  if (spec.heads_low > 0) {
    const int cl = spec.heads_low * d;
    p.wq_low = init_projection(cl, channels, rng);
    p.wk_low = init_projection(cl, channels, rng);
    p.wv_low = init_projection(cl, channels, rng);
    p.beta_low_raw = init_beta_raw(spec.heads_low, beta0);
    // Nearest-neighbor start: each output cell of the r x r block copies its
    // source cell.
    p.upsample_kernel = Tensor::full({cl, 1, spec.r, spec.r}, 1.0, true);
  }
  p.wp = init_projection(channels, channels, rng);
  return p;
}

void AttentionParams::collect_into(const std::string& prefix,
                                   ParamMap& out) const {
  collect(out, prefix + ".wq_high", wq_high);
  collect(out, prefix + ".wk_high", wk_high);
  collect(out, prefix + ".wv_high", wv_high);
  collect(out, prefix + ".wq_low", wq_low);
  collect(out, prefix + ".wk_low", wk_low);
  collect(out, prefix + ".wv_low", wv_low);
  collect(out, prefix + ".beta_high_raw", beta_high_raw);
  collect(out, prefix + ".beta_low_raw", beta_low_raw);
  collect(out, prefix + ".upsample_kernel", upsample_kernel);
  collect(out, prefix + ".wp", wp);
}

GdfnParams GdfnParams::init(int channels, int gamma, Rng& rng) {
  require(gamma >= 1, "GdfnParams: expansion factor must be >= 1");
  GdfnParams p;
  p.gamma = gamma;
  const int hidden = gamma * channels;
  p.expand = init_projection(2 * hidden, channels, rng);
  p.dwconv = Tensor::randn({2 * hidden, 1, 3, 3}, rng, 1.0 / 3.0, true);
  p.contract = init_projection(channels, hidden, rng);
  return p;
}

void GdfnParams::collect_into(const std::string& prefix, ParamMap& out) const {
  collect(out, prefix + ".expand", expand);
  collect(out, prefix + ".dwconv", dwconv);
  collect(out, prefix + ".contract", contract);
}

CsaParams CsaParams::init(int channels, Rng& rng, double beta_init) {
  CsaParams p;
  p.wq = init_projection(channels, channels, rng);
  p.wk = init_projection(channels, channels, rng);
  p.wv = init_projection(channels, channels, rng);
  p.beta_raw = Tensor::full({1, 1, 1, 1}, softplus_inverse(beta_init), true);
  return p;
}

void CsaParams::collect_into(const std::string& prefix, ParamMap& out) const {
  collect(out, prefix + ".wq", wq);
  collect(out, prefix + ".wk", wk);
  collect(out, prefix + ".wv", wv);
  collect(out, prefix + ".beta_raw", beta_raw);
}

Tensor drsa_forward(const Tensor& x, const AttentionParams& params,
                    const WindowSpec& spec, AttentionTrace* trace) {
  return dual_resolution_attention(x, x, params, spec, trace);
}

Tensor drca_forward(const Tensor& x, const Tensor& y,
                    const AttentionParams& params, const WindowSpec& spec,
                    AttentionTrace* trace) {
  require(x.shape() == y.shape(),
          "drca_forward: operand shapes differ, " + x.shape().str() + " vs " +
              y.shape().str());
  return dual_resolution_attention(x, y, params, spec, trace);
}

Tensor csa_forward(const Tensor& f, const CsaParams& params,
                   AttentionTrace* trace) {
  const Shape& s = f.shape();
  Tensor q = pointwise_conv(f, params.wq);
  Tensor k = pointwise_conv(f, params.wk);
  Tensor v = pointwise_conv(f, params.wv);
  const int hw = s.h * s.w;
  Tensor qm = reshape(q, {s.b, 1, s.c, hw});
  Tensor km = reshape(k, {s.b, 1, s.c, hw});
  Tensor vm = reshape(v, {s.b, 1, s.c, hw});
  Tensor scores = matmul(km, transpose_hw(qm));  // (B, 1, C, C)
  Tensor attn = softmax_rows(scores, add_scalar(softplus(params.beta_raw), 1e-12));
  if (trace) trace->matrices.push_back(attn);
  Tensor out = matmul(transpose_hw(vm), attn);  // (B, 1, HW, C)
  return reshape(transpose_hw(out), s);
}

Tensor gdfn_forward(const Tensor& f, const GdfnParams& params) {
  const int hidden = params.gamma * f.shape().c;
  Tensor expanded = pointwise_conv(f, params.expand);
  Tensor mixed = depthwise_conv3x3(expanded, params.dwconv);
  Tensor gate = slice_c(mixed, 0, hidden);
  Tensor content = slice_c(mixed, hidden, 2 * hidden);
  return pointwise_conv(mul(gelu(gate), content), params.contract);
}

TransformerBlockParams TransformerBlockParams::init(BlockKind kind,
                                                    int channels,
                                                    const WindowSpec& spec,
                                                    int gdfn_gamma,
                                                    bool normalize, Rng& rng) {
  TransformerBlockParams p;
  p.kind = kind;
  p.spec = spec;
  p.normalize = normalize;
  p.attn = AttentionParams::init(channels, spec, rng);
  p.w_attn = init_projection(channels, channels, rng);
  p.gdfn = GdfnParams::init(channels, gdfn_gamma, rng);
  p.w_gdfn = init_projection(channels, channels, rng);
  if (normalize) {
    p.ln_attn = LayerNormParams::init(channels);
    if (kind == BlockKind::Cross) p.ln_ctx = LayerNormParams::init(channels);
    p.ln_gdfn = LayerNormParams::init(channels);
  }
  return p;
}

void TransformerBlockParams::collect_into(const std::string& prefix,
                                          ParamMap& out) const {
  attn.collect_into(prefix + ".attn", out);
  collect(out, prefix + ".w_attn", w_attn);
  gdfn.collect_into(prefix + ".gdfn", out);
  collect(out, prefix + ".w_gdfn", w_gdfn);
  if (ln_attn) ln_attn->collect_into(prefix + ".ln_attn", out);
  if (ln_ctx) ln_ctx->collect_into(prefix + ".ln_ctx", out);
  if (ln_gdfn) ln_gdfn->collect_into(prefix + ".ln_gdfn", out);
}

Tensor transformer_block(const Tensor& x, const Tensor* y,
                         const TransformerBlockParams& params,
                         AttentionTrace* trace) {
  if (params.kind == BlockKind::Cross) {
    require(y != nullptr && y->defined(),
            "transformer_block: cross blocks need a second operand");
  } else {
    require(y == nullptr, "transformer_block: self blocks take one operand");
  }

  Tensor attn_in = apply_ln(x, params.ln_attn);
  Tensor attn_out;
  if (params.kind == BlockKind::Self) {
    attn_out = drsa_forward(attn_in, params.attn, params.spec, trace);
  } else {
    Tensor ctx = apply_ln(*y, params.ln_ctx);
    attn_out = drca_forward(attn_in, ctx, params.attn, params.spec, trace);
  }
  Tensor carrier = add(pointwise_conv(attn_out, params.w_attn), x);

  Tensor gdfn_in = apply_ln(carrier, params.ln_gdfn);
  Tensor gdfn_out = gdfn_forward(gdfn_in, params.gdfn);
  return add(pointwise_conv(gdfn_out, params.w_gdfn), carrier);
}

CsaBlockParams CsaBlockParams::init(int channels, int gdfn_gamma,
                                    bool normalize, Rng& rng) {
  CsaBlockParams p;
  p.normalize = normalize;
  p.csa = CsaParams::init(channels, rng);
  p.w_attn = init_projection(channels, channels, rng);
  p.gdfn = GdfnParams::init(channels, gdfn_gamma, rng);
  p.w_gdfn = init_projection(channels, channels, rng);
  if (normalize) {
    p.ln_attn = LayerNormParams::init(channels);
    p.ln_gdfn = LayerNormParams::init(channels);
  }
  return p;
}

void CsaBlockParams::collect_into(const std::string& prefix,
                                  ParamMap& out) const {
  csa.collect_into(prefix + ".csa", out);
  collect(out, prefix + ".w_attn", w_attn);
  gdfn.collect_into(prefix + ".gdfn", out);
  collect(out, prefix + ".w_gdfn", w_gdfn);
  if (ln_attn) ln_attn->collect_into(prefix + ".ln_attn", out);
  if (ln_gdfn) ln_gdfn->collect_into(prefix + ".ln_gdfn", out);
}

Tensor csa_transformer_block(const Tensor& f, const CsaBlockParams& params,
                             AttentionTrace* trace) {
  Tensor attn_in = apply_ln(f, params.ln_attn);
  Tensor attn_out = csa_forward(attn_in, params.csa, trace);
  Tensor carrier = add(pointwise_conv(attn_out, params.w_attn), f);
  Tensor gdfn_in = apply_ln(carrier, params.ln_gdfn);
  Tensor gdfn_out = gdfn_forward(gdfn_in, params.gdfn);
  return add(pointwise_conv(gdfn_out, params.w_gdfn), carrier);
}

}  // namespace vertenet
