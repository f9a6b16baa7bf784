// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/nn.hpp"

#include <cmath>

namespace vertenet {

std::size_t param_count(const ParamMap& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

LayerNormParams LayerNormParams::init(int channels) {
  LayerNormParams p;
  p.gamma = Tensor::full({1, channels, 1, 1}, 1.0, true);
  p.beta = Tensor::zeros({1, channels, 1, 1}, true);
  return p;
}

void LayerNormParams::collect_into(const std::string& prefix,
                                   ParamMap& out) const {
  collect(out, prefix + ".gamma", gamma);
  collect(out, prefix + ".beta", beta);
}

BatchNormParams BatchNormParams::init(int channels) {
  BatchNormParams p;
  p.gamma = Tensor::full({1, channels, 1, 1}, 1.0, true);
  p.beta = Tensor::zeros({1, channels, 1, 1}, true);
  p.running_mean = Tensor::zeros({1, channels, 1, 1}, false);
  p.running_var = Tensor::full({1, channels, 1, 1}, 1.0, false);
  return p;
}

void BatchNormParams::collect_into(const std::string& prefix,
                                   ParamMap& out) const {
  collect(out, prefix + ".gamma", gamma);
  collect(out, prefix + ".beta", beta);
  collect(out, prefix + ".running_mean", running_mean);
  collect(out, prefix + ".running_var", running_var);
}

Tensor layer_norm_channels(const Tensor& x, const LayerNormParams& p,
                           double eps) {
  Tensor mu = mean_c(x);
  Tensor centered = add_bcast_plane(x, scale(mu, -1.0));
  Tensor var = mean_c(mul(centered, centered));
  Tensor inv_std = pow_const(add_scalar(var, eps), -0.5);
  Tensor normed = mul_bcast_plane(centered, inv_std);
  return add_bcast_c(mul_bcast_c(normed, p.gamma), p.beta);
}

Tensor batch_norm(const Tensor& x, BatchNormParams& p, bool training,
                  double eps, double momentum) {
  if (training) {
    Tensor mu = mean_bhw(x);
    Tensor centered = add_bcast_c(x, scale(mu, -1.0));
    Tensor var = mean_bhw(mul(centered, centered));
    Tensor inv_std = pow_const(add_scalar(var, eps), -0.5);
    Tensor normed = mul_bcast_c(centered, inv_std);

    auto rm = p.running_mean.data_mut();
    auto rv = p.running_var.data_mut();
    const auto mv = mu.data();
    const auto vv = var.data();
    for (std::size_t i = 0; i < rm.size(); ++i) {
      rm[i] = (1.0 - momentum) * rm[i] + momentum * mv[i];
      rv[i] = (1.0 - momentum) * rv[i] + momentum * vv[i];
    }
    return add_bcast_c(mul_bcast_c(normed, p.gamma), p.beta);
  }

  const int c = x.shape().c;
  std::vector<double> neg_mean(c), inv_std(c);
  const auto rm = p.running_mean.data();
  const auto rv = p.running_var.data();
  for (int i = 0; i < c; ++i) {
    neg_mean[i] = -rm[i];
    inv_std[i] = 1.0 / std::sqrt(rv[i] + eps);
  }
  Tensor centered =
      add_bcast_c(x, Tensor::from_vector({1, c, 1, 1}, std::move(neg_mean)));
  Tensor scaled = mul_bcast_c(
      centered, mul(p.gamma, Tensor::from_vector({1, c, 1, 1}, std::move(inv_std))));
  return add_bcast_c(scaled, p.beta);
}

Tensor conv2d_replicate(const Tensor& x, const Tensor& w, int stride,
                        int pad) {
  return conv2d(replicate_pad(x, pad, pad, pad, pad), w, stride, 0);
}

double softplus_inverse(double y) {
  // log(exp(y) - 1), stable for both small and large y
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

Tensor init_conv_weight(int c_out, int c_in, int k, Rng& rng) {
  const double stdev = std::sqrt(2.0 / (static_cast<double>(c_in) * k * k));
  return Tensor::randn({c_out, c_in, k, k}, rng, stdev, true);
}

Tensor init_bias(int c_out) { return Tensor::zeros({1, c_out, 1, 1}, true); }

}  // namespace vertenet
