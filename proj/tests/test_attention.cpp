// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "vertenet/attention.hpp"
#include "vertenet/gradcheck.hpp"

using namespace vertenet;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < av.size(); ++i) {
    m = std::max(m, std::fabs(av[i] - bv[i]));
  }
  return m;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(a[i] - b[i]));
  }
  return m;
}

bool spatially_constant(const Tensor& t, double tol = 1e-12) {
  const Shape& s = t.shape();
  const auto v = t.data();
  for (int bc = 0; bc < s.b * s.c; ++bc) {
    const double first = v[static_cast<std::size_t>(bc) * s.h * s.w];
    for (int i = 1; i < s.h * s.w; ++i) {
      if (std::fabs(v[static_cast<std::size_t>(bc) * s.h * s.w + i] - first) >
          tol) {
        return false;
      }
    }
  }
  return true;
}

void check_rows_sum_to_one(const AttentionTrace& trace) {
  REQUIRE(!trace.matrices.empty());
  for (const Tensor& m : trace.matrices) {
    const Shape& s = m.shape();
    const auto v = m.data();
    for (std::size_t r = 0; r < m.numel() / s.w; ++r) {
      double sum = 0.0;
      for (int j = 0; j < s.w; ++j) sum += v[r * s.w + j];
      CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
  }
}

}  // namespace

TEST_CASE("drsa keeps the input shape") {
  Rng rng(5);
  const WindowSpec spec{10, 2, 1, 1};
  AttentionParams params = AttentionParams::init(8, spec, rng);
  Tensor x = Tensor::randn({1, 8, 20, 20}, rng);
  CHECK(drsa_forward(x, params, spec).shape() == x.shape());

  // non-divisible dims go through padding and come back cropped
  Tensor odd = Tensor::randn({2, 8, 13, 9}, rng);
  CHECK(drsa_forward(odd, params, spec).shape() == odd.shape());
}

TEST_CASE("drsa with heads_low = 0 matches the naive windowed attention") {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    const WindowSpec spec{10, 3, 2, 0};
    AttentionParams params = AttentionParams::init(8, spec, rng);
    Tensor x = Tensor::randn({1, 8, 20, 20}, rng);
    Tensor out = drsa_forward(x, params, spec);
    const auto expected =
        oracle::windowed_mhsa(x, params.wq_high, params.wk_high,
                              params.wv_high, params.beta_high_raw, params.wp,
                              spec.p, spec.heads_high);
    CHECK(max_abs_diff(out.data(), expected) < 1e-10);
  }
}

TEST_CASE("spatially constant input stays spatially constant through drsa") {
  Rng rng(9);
  const WindowSpec spec{5, 2, 1, 1};
  AttentionParams params = AttentionParams::init(4, spec, rng);
  Tensor x = Tensor::full({1, 4, 10, 10}, 0.37);
  CHECK(spatially_constant(drsa_forward(x, params, spec)));
}

TEST_CASE("drca with tied operands equals drsa") {
  Rng rng(13);
  const WindowSpec spec{6, 2, 1, 1};
  AttentionParams params = AttentionParams::init(6, spec, rng);
  Tensor x = Tensor::randn({1, 6, 12, 12}, rng);
  CHECK(max_abs_diff(drca_forward(x, x, params, spec),
                     drsa_forward(x, params, spec)) < 1e-12);
}

TEST_CASE("drca validates operand shapes") {
  Rng rng(14);
  const WindowSpec spec{4, 2, 1, 1};
  AttentionParams params = AttentionParams::init(4, spec, rng);
  Tensor x = Tensor::randn({1, 4, 8, 8}, rng);
  Tensor y = Tensor::randn({1, 4, 8, 6}, rng);
  CHECK_THROWS_AS(drca_forward(x, y, params, spec), std::invalid_argument);
  CHECK(drca_forward(x, Tensor::randn({1, 4, 8, 8}, rng), params, spec)
            .shape() == x.shape());
}

TEST_CASE("constant context makes drca output constant within windows") {
  Rng rng(15);
  const WindowSpec spec{4, 2, 1, 1};
  AttentionParams params = AttentionParams::init(4, spec, rng);
  Tensor x = Tensor::randn({1, 4, 8, 8}, rng);
  Tensor y = Tensor::full({1, 4, 8, 8}, 1.25);
  Tensor out = drca_forward(x, y, params, spec);
  const Shape& s = out.shape();
  const auto v = out.data();
  for (int c = 0; c < s.c; ++c) {
    for (int wy = 0; wy < 2; ++wy) {
      for (int wx = 0; wx < 2; ++wx) {
        const double first =
            v[(static_cast<std::size_t>(c) * s.h + wy * 4) * s.w + wx * 4];
        for (int i = 0; i < 4; ++i) {
          for (int j = 0; j < 4; ++j) {
            const double val = v[(static_cast<std::size_t>(c) * s.h + wy * 4 +
                                  i) *
                                     s.w +
                                 wx * 4 + j];
            CHECK(std::fabs(val - first) < 1e-12);
          }
        }
      }
    }
  }
}

TEST_CASE("csa matches the dense evaluation") {
  for (std::uint64_t seed : {21, 22, 23}) {
    Rng rng(seed);
    CsaParams params = CsaParams::init(16, rng);
    Tensor f = Tensor::randn({1, 16, 10, 10}, rng);
    Tensor out = csa_forward(f, params);
    CHECK(out.shape() == f.shape());
    const auto expected =
        oracle::dense_csa(f, params.wq, params.wk, params.wv, params.beta_raw);
    CHECK(max_abs_diff(out.data(), expected) < 1e-12);
  }
}

TEST_CASE("single-channel csa degenerates to the value projection") {
  Rng rng(31);
  CsaParams params = CsaParams::init(1, rng);
  Tensor f = Tensor::randn({1, 1, 6, 6}, rng);
  Tensor expected = pointwise_conv(f, params.wv);
  CHECK(max_abs_diff(csa_forward(f, params), expected) < 1e-12);
}

TEST_CASE("gdfn gating and shape") {
  Rng rng(41);
  GdfnParams params = GdfnParams::init(8, 2, rng);
  Tensor f = Tensor::randn({1, 8, 20, 20}, rng);
  CHECK(gdfn_forward(f, params).shape() == f.shape());

  // zero the gate half of the expansion and depthwise kernels
  const int hidden = params.gamma * 8;
  {
    Tensor w = params.expand;
    auto d = w.data_mut();
    std::fill(d.begin(), d.begin() + static_cast<std::size_t>(hidden) * 8, 0.0);
    Tensor dw = params.dwconv;
    auto dd = dw.data_mut();
    std::fill(dd.begin(), dd.begin() + static_cast<std::size_t>(hidden) * 9, 0.0);
  }
  Tensor out = gdfn_forward(f, params);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("transformer block residual identity and contracts") {
  Rng rng(51);
  const WindowSpec spec{5, 2, 1, 1};
  for (bool normalize : {true, false}) {
    TransformerBlockParams params = TransformerBlockParams::init(
        BlockKind::Self, 4, spec, 2, normalize, rng);
    Tensor x = Tensor::randn({1, 4, 10, 10}, rng);
    CHECK(transformer_block(x, nullptr, params).shape() == x.shape());

    // zero every projection: both residual hops reduce to the identity
    ParamMap pm;
    params.collect_into("b", pm);
    for (auto& [name, t] : pm) {
      if (name.find("ln_") != std::string::npos) continue;
      if (name.find("beta_") != std::string::npos) continue;
      auto d = t.data_mut();
      std::fill(d.begin(), d.end(), 0.0);
    }
    CHECK(max_abs_diff(transformer_block(x, nullptr, params), x) < 1e-12);
  }
}

TEST_CASE("cross blocks demand the second operand") {
  Rng rng(52);
  const WindowSpec spec{4, 2, 1, 1};
  TransformerBlockParams cross =
      TransformerBlockParams::init(BlockKind::Cross, 4, spec, 2, true, rng);
  Tensor x = Tensor::randn({1, 4, 8, 8}, rng);
  CHECK_THROWS_AS(transformer_block(x, nullptr, cross), std::invalid_argument);
  TransformerBlockParams self =
      TransformerBlockParams::init(BlockKind::Self, 4, spec, 2, true, rng);
  CHECK_THROWS_AS(transformer_block(x, &x, self), std::invalid_argument);
}

TEST_CASE("every attention matrix row sums to one") {
  Rng rng(61);
  const WindowSpec spec{4, 2, 1, 1};
  for (int i = 0; i < 20; ++i) {
    AttentionParams params = AttentionParams::init(4, spec, rng);
    CsaParams csa = CsaParams::init(4, rng);
    Tensor x = Tensor::randn({1, 4, 8, 8}, rng, rng.uniform(0.1, 10.0));
    Tensor y = Tensor::randn({1, 4, 8, 8}, rng);
    AttentionTrace trace;
    drsa_forward(x, params, spec, &trace);
    drca_forward(x, y, params, spec, &trace);
    csa_forward(x, csa, &trace);
    check_rows_sum_to_one(trace);
  }
}

TEST_CASE("permutation of tokens inside one window permutes the output") {
  Rng rng(71);
  const WindowSpec spec{6, 1, 2, 0};  // one 6x6 window, full-resolution only
  AttentionParams params = AttentionParams::init(4, spec, rng);
  Tensor x = Tensor::randn({1, 4, 6, 6}, rng);

  // a fixed spatial shuffle of the 36 cells
  std::vector<int> perm(36);
  for (int i = 0; i < 36; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng.engine());

  auto permute = [&](const Tensor& t) {
    const Shape& s = t.shape();
    std::vector<double> out(t.numel());
    const auto v = t.data();
    for (int c = 0; c < s.c; ++c) {
      for (int i = 0; i < 36; ++i) {
        out[static_cast<std::size_t>(c) * 36 + perm[i]] =
            v[static_cast<std::size_t>(c) * 36 + i];
      }
    }
    return Tensor::from_vector(s, std::move(out));
  };

  Tensor lhs = drsa_forward(permute(x), params, spec);
  Tensor rhs = permute(drsa_forward(x, params, spec));
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);
}

TEST_CASE("low branch footprint exceeds the window when r > 1") {
  Rng rng(81);
  Tensor base = Tensor::randn({1, 4, 20, 20}, rng);

  auto footprint_cells = [&](int r) {
    const WindowSpec spec{10, r, 0, 1};
    Rng prng(82);
    AttentionParams params = AttentionParams::init(4, spec, prng);
    NoGradGuard value_only;
    Tensor ref = drsa_forward(base, params, spec);
    const double ref_cell = ref.at(0, 0, 0, 0);
    int count = 0;
    for (int y = 0; y < 20; ++y) {
      for (int x = 0; x < 20; ++x) {
        Tensor probe = base.clone();
        {
          auto d = probe.data_mut();
          d[static_cast<std::size_t>(y) * 20 + x] += 0.5;
        }
        Tensor out = drsa_forward(probe, params, spec);
        if (std::fabs(out.at(0, 0, 0, 0) - ref_cell) > 1e-12) ++count;
      }
    }
    return count;
  };

  // r=2: the pooled 10x10 window covers the whole 20x20 input
  CHECK(footprint_cells(2) == 400);
  // r=1: sensitivity stays inside the 10x10 window holding the probed cell
  CHECK(footprint_cells(1) == 100);
}

TEST_CASE("attention parameter gradients stay sound inside blocks") {
  Rng rng(91);
  const WindowSpec spec{4, 2, 1, 1};
  TransformerBlockParams params =
      TransformerBlockParams::init(BlockKind::Cross, 4, spec, 2, true, rng);
  Tensor x = Tensor::randn({1, 4, 8, 8}, rng, 1.0, true);
  Tensor y = Tensor::randn({1, 4, 8, 8}, rng, 1.0, true);
  ParamMap pm;
  params.collect_into("cross", pm);
  std::vector<std::pair<std::string, Tensor>> points(pm.begin(), pm.end());
  points.emplace_back("x", x);
  points.emplace_back("y", y);
  auto report = finite_diff_gradcheck(
      [&]() { return sum_all(transformer_block(x, &y, params)); }, points);
  INFO("worst: " << report.worst_tensor);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("full dual-resolution forward matches the direct reference") {
  for (std::uint64_t seed : {61, 62}) {
    Rng rng(seed);
    const WindowSpec spec{10, 2, 1, 1};
    AttentionParams params = AttentionParams::init(8, spec, rng);
    // re-randomize the upsample kernel so the reference exercises it
    {
      Rng krng(seed + 100);
      auto kd = params.upsample_kernel.data_mut();
      for (auto& v : kd) v = krng.normal(0.0, 0.5);
    }
    Tensor x = Tensor::randn({1, 8, 20, 20}, rng);
    Tensor y = Tensor::randn({1, 8, 20, 20}, rng);
    {
      Tensor out = drsa_forward(x, params, spec);
      const auto ref = oracle::dual_resolution_reference(x, x, params, spec);
      CHECK(max_abs_diff(out.data(), ref) < 1e-10);
    }
    {
      Tensor out = drca_forward(x, y, params, spec);
      const auto ref = oracle::dual_resolution_reference(x, y, params, spec);
      CHECK(max_abs_diff(out.data(), ref) < 1e-10);
    }
    // and on a shape that needs padding in both branches
    Tensor odd = Tensor::randn({2, 8, 13, 17}, rng);
    Tensor out = drsa_forward(odd, params, spec);
    const auto ref = oracle::dual_resolution_reference(odd, odd, params, spec);
    CHECK(max_abs_diff(out.data(), ref) < 1e-10);
  }
}

TEST_CASE("drsa input gradient at a full-size reference shape") {
  Rng rng(95);
  const WindowSpec spec{10, 2, 1, 1};
  AttentionParams params = AttentionParams::init(8, spec, rng);
  Tensor x = Tensor::randn({1, 8, 20, 20}, rng, 1.0, true);
  auto report = finite_diff_gradcheck(
      [&]() { return sum_all(drsa_forward(x, params, spec)); }, {{"x", x}});
  CHECK(report.max_rel_err < 1e-4);
}
