// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include "vertenet/model.hpp"

namespace vertenet {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void set_head_trainable(HeadParams& head, bool trainable) {
  head.conv_w.set_requires_grad(trainable);
  head.conv_b.set_requires_grad(trainable);
  head.out_w.set_requires_grad(trainable);
  head.out_b.set_requires_grad(trainable);
}

}  // namespace

TrainResult toy_train(VerteNetParams& params, const ModelConfig& cfg,
                      const std::vector<SynthSample>& data,
                      const TrainOptions& options) {
  require(!data.empty(), "toy_train: empty dataset");
  require(options.steps >= 0, "toy_train: negative step count");
  require(options.lr > 0.0, "toy_train: learning rate must be positive");

  set_head_trainable(params.heatmap_head, options.train_heatmap);
  set_head_trainable(params.center_head, options.train_center);
  set_head_trainable(params.corner_head, options.train_corner);

  const int h = data[0].image.height;
  const int w = data[0].image.width;
  Tensor images = image_batch_tensor(data);
  std::vector<LandmarkSet> gt;
  gt.reserve(data.size());
  for (const auto& s : data) gt.push_back(s.landmarks);
  RenderedTargets targets = render_targets(gt, cfg, h, w);

  ParamMap trainables = params.trainable_params();
  std::vector<std::vector<double>> velocity(trainables.size());
  for (std::size_t i = 0; i < trainables.size(); ++i) {
    velocity[i].assign(trainables[i].second.numel(), 0.0);
  }

  auto eval_loss = [&]() {
    HeadOutputs out = vertenet_forward(images, params, cfg, /*training=*/true);
    Tensor loss = focal_heatmap_loss(out.heatmap, targets.heatmap);
    loss = add(loss, offset_l1_loss(out.center_offset, targets.center_offset,
                                    targets.peak_mask));
    loss = add(loss, offset_l1_loss(out.corner_offset, targets.corner_offset,
                                    targets.peak_mask));
    return loss;
  };

  auto unfreeze_and_diverge = [&](int step, const std::string& why) {
    set_head_trainable(params.heatmap_head, true);
    set_head_trainable(params.center_head, true);
    set_head_trainable(params.corner_head, true);
    throw TrainingDiverged(step, "toy_train: " + why + " at step " +
                                     std::to_string(step));
  };

  TrainResult result;
  for (int step = 0; step < options.steps; ++step) {
    for (auto& [name, t] : trainables) {
      t.zero_grad();
      if (!all_finite(t)) unfreeze_and_diverge(step, "non-finite parameters");
    }
    Tensor loss;
    try {
      loss = eval_loss();
    } catch (const std::invalid_argument& e) {
      // After step 0 the shapes are fixed, so a data-driven validation
      // failure (prediction range, temperature positivity) means the run
      // blew up.
      unfreeze_and_diverge(step, e.what());
    }
    const double lv = loss.value();
    if (!std::isfinite(lv)) {
      unfreeze_and_diverge(step, "non-finite loss");
    }
    result.loss_curve.push_back(lv);
    backward(loss);
    for (std::size_t i = 0; i < trainables.size(); ++i) {
      Tensor& t = trainables[i].second;
      auto g = t.grad();
      auto p = t.data_mut();
      auto& v = velocity[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        v[j] = options.momentum * v[j] - options.lr * g[j];
        p[j] += v[j];
      }
    }
  }
  result.loss_curve.push_back(eval_loss().value());

  set_head_trainable(params.heatmap_head, true);
  set_head_trainable(params.center_head, true);
  set_head_trainable(params.corner_head, true);
  return result;
}

double mean_corner_error_px(VerteNetParams& params, const ModelConfig& cfg,
                            const std::vector<SynthSample>& data) {
  require(!data.empty(), "mean_corner_error_px: empty dataset");
  Tensor images = image_batch_tensor(data);
  HeadOutputs out = vertenet_forward(images, params, cfg, /*training=*/false);

  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& gt = data[i].landmarks;
    LandmarkSet pred = decode_landmarks(out, cfg, gt.image_height,
                                        gt.image_width, static_cast<int>(i));
    if (!pred.complete || pred.vertebrae.size() != gt.vertebrae.size()) {
      return std::numeric_limits<double>::infinity();
    }
    for (std::size_t v = 0; v < gt.vertebrae.size(); ++v) {
      for (int c = 0; c < 4; ++c) {
        total += distance(pred.vertebrae[v].corners[c],
                          gt.vertebrae[v].corners[c]);
        ++count;
      }
    }
  }
  return total / count;
}

}  // namespace vertenet
