// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/checks.hpp"

#include "vertenet/gradcheck.hpp"
#include "vertenet/model.hpp"

namespace vertenet {

namespace {

std::vector<std::pair<std::string, Tensor>> with_input(
    const ParamMap& params, const std::string& name, const Tensor& input) {
  std::vector<std::pair<std::string, Tensor>> points(params.begin(),
                                                     params.end());
  points.emplace_back(name, input);
  return points;
}

ParamMap trainable_only(const ParamMap& params) {
  ParamMap out;
  for (const auto& [name, t] : params) {
    if (t.requires_grad()) out.emplace_back(name, t);
  }
  return out;
}

}  // namespace

std::vector<BlockCheck> run_block_gradchecks(std::uint64_t seed, double eps) {
  std::vector<BlockCheck> results;
  Rng rng(seed);

  {
    const WindowSpec spec{4, 2, 1, 1};
    AttentionParams params = AttentionParams::init(4, spec, rng);
    Tensor x = Tensor::randn({1, 4, 8, 8}, rng, 1.0, true);
    ParamMap pm;
    params.collect_into("drsa", pm);
    auto f = [&]() { return sum_all(drsa_forward(x, params, spec)); };
    results.push_back(
        {"drsa", finite_diff_gradcheck(f, with_input(pm, "x", x), eps)
                     .max_rel_err});
  }
  {
    const WindowSpec spec{4, 2, 1, 1};
    AttentionParams params = AttentionParams::init(4, spec, rng);
    Tensor x = Tensor::randn({1, 4, 8, 8}, rng, 1.0, true);
    Tensor y = Tensor::randn({1, 4, 8, 8}, rng, 1.0, true);
    ParamMap pm;
    params.collect_into("drca", pm);
    auto points = with_input(pm, "x", x);
    points.emplace_back("y", y);
    auto f = [&]() { return sum_all(drca_forward(x, y, params, spec)); };
    results.push_back(
        {"drca", finite_diff_gradcheck(f, points, eps).max_rel_err});
  }
  {
    CsaParams params = CsaParams::init(6, rng);
    Tensor x = Tensor::randn({1, 6, 5, 5}, rng, 1.0, true);
    ParamMap pm;
    params.collect_into("csa", pm);
    auto f = [&]() { return sum_all(csa_forward(x, params)); };
    results.push_back(
        {"csa", finite_diff_gradcheck(f, with_input(pm, "x", x), eps)
                    .max_rel_err});
  }
  {
    GdfnParams params = GdfnParams::init(4, 2, rng);
    Tensor x = Tensor::randn({1, 4, 6, 6}, rng, 1.0, true);
    ParamMap pm;
    params.collect_into("gdfn", pm);
    auto f = [&]() { return sum_all(gdfn_forward(x, params)); };
    results.push_back(
        {"gdfn", finite_diff_gradcheck(f, with_input(pm, "x", x), eps)
                     .max_rel_err});
  }
  {
    const WindowSpec spec{4, 2, 1, 1};
    TransformerBlockParams params =
        TransformerBlockParams::init(BlockKind::Self, 4, spec, 2, true, rng);
    Tensor x = Tensor::randn({1, 4, 8, 8}, rng, 1.0, true);
    ParamMap pm;
    params.collect_into("block", pm);
    auto f = [&]() { return sum_all(transformer_block(x, nullptr, params)); };
    results.push_back(
        {"transformer_block", finite_diff_gradcheck(f, with_input(pm, "x", x),
                                                    eps)
                                  .max_rel_err});
  }
  {
    const WindowSpec spec{5, 2, 1, 1};
    McfbParams params =
        McfbParams::init(FusionMode::Full, 4, 4, spec, 2, true, rng);
    Tensor a = Tensor::randn({1, 4, 10, 10}, rng, 1.0, true);
    Tensor b = Tensor::randn({1, 4, 10, 10}, rng, 1.0, true);
    ParamMap pm;
    params.collect_into("mcfb", pm);
    auto points = with_input(trainable_only(pm), "x_skip", a);
    points.emplace_back("x_dec", b);
    auto f = [&]() { return sum_all(mcfb_fuse(a, b, params, false)); };
    results.push_back(
        {"mcfb_fuse", finite_diff_gradcheck(f, points, eps).max_rel_err});
  }
  {
    // End-to-end check with block normalization off. Central
    // differences cannot probe a deep ReLU network at a point where some
    // activation sits within eps of its kink, so this check needs seeds
    // whose forward is in general position; 9, 12 and 14 are verified ones
    // with max relative error around 1e-7.
    Rng model_rng(seed);
    ModelConfig cfg;
    cfg.widths = {2, 2, 2, 2};
    cfg.gdfn_gamma = 1;
    cfg.normalize_blocks = false;
    VerteNetParams params = VerteNetParams::init(cfg, model_rng);
    Tensor image = Tensor::randn({1, 1, 64, 32}, model_rng, 0.5, true);
    // Populate the batch-norm running statistics before checking the
    // inference path; fresh zero-mean/unit-var buffers leave narrow stages
    // entirely on one side of their ReLUs.
    for (int i = 0; i < 30; ++i) {
      vertenet_forward(image, params, cfg, /*training=*/true);
    }
    auto points = trainable_only(params.named_params());
    auto f = [&]() {
      HeadOutputs out = vertenet_forward(image, params, cfg, false);
      return add(sum_all(out.heatmap), add(sum_all(out.center_offset),
                                           sum_all(out.corner_offset)));
    };
    results.push_back(
        {"vertenet_tiny", finite_diff_gradcheck(f, points, eps).max_rel_err});
  }
  return results;
}

}  // namespace vertenet
