// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vertenet/tensor.hpp"

namespace vertenet {

// Named handles onto a model's learnable leaves. Handles share storage with
// the owning parameter structs, so optimizer updates through the map are
// visible everywhere.
using ParamMap = std::vector<std::pair<std::string, Tensor>>;

inline void collect(ParamMap& out, const std::string& name, const Tensor& t) {
  if (t.defined()) out.emplace_back(name, t);
}

std::size_t param_count(const ParamMap& params);

struct LayerNormParams {
  Tensor gamma;  // (1, C, 1, 1)
  Tensor beta;   // (1, C, 1, 1)
  static LayerNormParams init(int channels);
  void collect_into(const std::string& prefix, ParamMap& out) const;
};

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;  // buffers, not learnable
  Tensor running_var;
  static BatchNormParams init(int channels);
  void collect_into(const std::string& prefix, ParamMap& out) const;
};

// Normalization over the channel dimension at each (batch, y, x) position.
Tensor layer_norm_channels(const Tensor& x, const LayerNormParams& p,
                           double eps = 1e-5);

// training == true normalizes with batch statistics (and refreshes the
// running buffers); otherwise the running statistics are used so the op is a
// deterministic function of its input.
Tensor batch_norm(const Tensor& x, BatchNormParams& p, bool training,
                  double eps = 1e-5, double momentum = 0.1);

// Convolution with edge-replication padding, the spatial-padding convention
// used throughout the model.
Tensor conv2d_replicate(const Tensor& x, const Tensor& w, int stride, int pad);

// Positive reparameterization helpers for learnable temperatures.
double softplus_inverse(double y);

// Weight initializers. Deterministic given the Rng state.
Tensor init_conv_weight(int c_out, int c_in, int k, Rng& rng);
Tensor init_bias(int c_out);

}  // namespace vertenet
