// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "vertenet/gradcheck.hpp"
#include "vertenet/tensor.hpp"

using namespace vertenet;

namespace {

Tensor randn_for(const Shape& s, std::uint64_t seed, double stdev = 1.0,
                 bool grad = true) {
  Rng rng(seed);
  return Tensor::randn(s, rng, stdev, grad);
}

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

// One-liner for the per-primitive derivative sweep.
void check_grad(const char* what, const std::function<Tensor()>& f,
                std::vector<std::pair<std::string, Tensor>> points) {
  const auto report = finite_diff_gradcheck(f, points);
  INFO(what << ": worst " << report.worst_tensor << "[" << report.worst_index
            << "] analytic " << report.worst_analytic << " numeric "
            << report.worst_numeric);
  CHECK(report.max_rel_err < 1e-4);
}

}  // namespace

TEST_CASE("tensor construction and validation") {
  CHECK_THROWS_AS(Tensor::zeros({0, 1, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::zeros({1, 1, -2, 1}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::from_vector({1, 1, 2, 2}, {1.0}), std::invalid_argument);
  Tensor t = Tensor::from_vector({1, 2, 1, 2}, {1, 2, 3, 4});
  CHECK(t.at(0, 1, 0, 1) == 4.0);
  CHECK(t.numel() == 4);
}

TEST_CASE("relu example") {
  Tensor x = Tensor::from_vector({1, 1, 1, 2}, {-1.0, 2.0});
  Tensor y = relu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == 2.0);
}

TEST_CASE("identity pointwise conv is the identity") {
  Tensor x = randn_for({2, 3, 5, 4}, 11, 1.0, false);
  std::vector<double> id(9, 0.0);
  id[0] = id[4] = id[8] = 1.0;  // 3x3 identity as (3,3,1,1)
  Tensor w = Tensor::from_vector({3, 3, 1, 1}, id);
  CHECK(max_abs_diff(pointwise_conv(x, w), x) == 0.0);
}

TEST_CASE("bilinear upsample preserves constants") {
  Tensor x = Tensor::full({1, 2, 3, 5}, 0.7);
  Tensor y = bilinear_upsample(x, 2);
  CHECK(y.shape() == Shape{1, 2, 6, 10});
  for (double v : y.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("avg_pool2d examples") {
  SUBCASE("all ones") {
    Tensor x = Tensor::full({1, 1, 4, 4}, 1.0);
    Tensor y = avg_pool2d(x, 2);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (double v : y.data()) CHECK(v == 1.0);
  }
  SUBCASE("arithmetic mean") {
    Tensor x = Tensor::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor y = avg_pool2d(x, 2);
    CHECK(y.data()[0] == doctest::Approx(2.5).epsilon(1e-15));
  }
  SUBCASE("shape rule with non-divisible dims") {
    Tensor x = randn_for({1, 8, 20, 10}, 3);
    CHECK(avg_pool2d(x, 2).shape() == Shape{1, 8, 10, 5});
    Tensor odd = randn_for({1, 2, 7, 5}, 4);
    CHECK(avg_pool2d(odd, 2).shape() == Shape{1, 2, 4, 3});
  }
  SUBCASE("r = 1 is the identity") {
    Tensor x = randn_for({1, 2, 3, 3}, 5);
    Tensor y = avg_pool2d(x, 1);
    CHECK(y.node() == x.node());
  }
  SUBCASE("r <= 0 rejected") {
    Tensor x = Tensor::zeros({1, 1, 2, 2});
    CHECK_THROWS_AS(avg_pool2d(x, 0), std::invalid_argument);
  }
}

TEST_CASE("transposed conv upsample examples") {
  SUBCASE("single tap, all-ones kernel") {
    Tensor x = Tensor::full({1, 1, 1, 1}, 3.5);
    Tensor w = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor y = transposed_conv_upsample(x, 2, w, 1);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (double v : y.data()) CHECK(v == 3.5);
  }
  SUBCASE("single tap, corner kernel") {
    Tensor x = Tensor::full({1, 1, 1, 1}, 2.0);
    Tensor w = Tensor::from_vector({1, 1, 2, 2}, {1, 0, 0, 0});
    Tensor y = transposed_conv_upsample(x, 2, w, 1);
    CHECK(y.data()[0] == 2.0);
    CHECK(y.data()[1] == 0.0);
    CHECK(y.data()[2] == 0.0);
    CHECK(y.data()[3] == 0.0);
  }
  SUBCASE("shape rule") {
    Tensor x = randn_for({1, 4, 10, 5}, 6);
    Tensor w = Tensor::full({4, 1, 2, 2}, 1.0);
    CHECK(transposed_conv_upsample(x, 2, w, 4).shape() == Shape{1, 4, 20, 10});
  }
  SUBCASE("bad factor rejected") {
    Tensor x = Tensor::zeros({1, 1, 2, 2});
    Tensor w = Tensor::zeros({1, 1, 2, 2});
    CHECK_THROWS_AS(transposed_conv_upsample(x, 0, w, 1), std::invalid_argument);
  }
}

TEST_CASE("softmax_rows examples and properties") {
  SUBCASE("symmetry") {
    Tensor x = Tensor::from_vector({1, 1, 1, 2}, {0.0, 0.0});
    Tensor y = softmax_rows(x, 3.0);
    CHECK(y.data()[0] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("closed form") {
    Tensor x = Tensor::from_vector({1, 1, 1, 2}, {std::log(2.0), 0.0});
    Tensor y = softmax_rows(x, 1.0);
    CHECK(y.data()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(y.data()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  }
  SUBCASE("stabilized against overflow") {
    Tensor x = Tensor::from_vector({1, 1, 1, 2}, {1000.0, 0.0});
    Tensor y = softmax_rows(x, 1.0);
    CHECK(all_finite(y));
    CHECK(y.data()[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y.data()[1] == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("rows sum to one for arbitrary finite inputs") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      Tensor x = Tensor::randn({2, 3, 4, 7}, rng, 50.0);
      Tensor y = softmax_rows(x);
      const auto yv = y.data();
      for (std::size_t r = 0; r < y.numel() / 7; ++r) {
        double sum = 0.0;
        for (int j = 0; j < 7; ++j) sum += yv[r * 7 + j];
        CHECK(std::fabs(sum - 1.0) < 1e-12);
      }
    }
  }
  SUBCASE("bad temperature rejected") {
    Tensor x = Tensor::zeros({1, 1, 1, 2});
    CHECK_THROWS_AS(softmax_rows(x, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(softmax_rows(x, -1.0), std::invalid_argument);
  }
}

TEST_CASE("shape mismatches are rejected with the offending dims") {
  Tensor a = Tensor::zeros({1, 2, 3, 3});
  Tensor b = Tensor::zeros({1, 2, 3, 4});
  try {
    add(a, b);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(1, 2, 3, 3)") != std::string::npos);
    CHECK(msg.find("(1, 2, 3, 4)") != std::string::npos);
  }
  Tensor w = Tensor::zeros({4, 3, 9, 9});
  CHECK_THROWS_AS(conv2d(a, w, 1, 2), std::invalid_argument);
}

TEST_CASE("window partition examples") {
  SUBCASE("counting") {
    auto [w, grid] = window_partition(randn_for({1, 2, 20, 20}, 7), 10);
    CHECK(grid.windows() == 4);
    CHECK(w.shape() == Shape{4, 2, 10, 10});
  }
  SUBCASE("padding rule") {
    auto [w, grid] = window_partition(randn_for({1, 2, 64, 32}, 8), 10);
    CHECK(grid.grid_h == 7);
    CHECK(grid.grid_w == 4);
    CHECK(grid.windows() == 28);
  }
  SUBCASE("single window is the map itself") {
    Tensor x = randn_for({1, 3, 6, 6}, 9);
    auto [w, grid] = window_partition(x, 6);
    CHECK(grid.windows() == 1);
    CHECK(max_abs_diff(w, x) == 0.0);
  }
  SUBCASE("merge inverts partition exactly") {
    Tensor x = randn_for({2, 3, 13, 7}, 10);
    auto [w, grid] = window_partition(x, 5);
    CHECK(max_abs_diff(window_merge(w, grid), x) == 0.0);
  }
  SUBCASE("bad window size rejected") {
    CHECK_THROWS_AS(window_partition(Tensor::zeros({1, 1, 4, 4}), 0),
                    std::invalid_argument);
  }
}

TEST_CASE("gradcheck facility examples") {
  SUBCASE("square function") {
    Tensor x = Tensor::scalar(3.0, true);
    auto report = finite_diff_gradcheck([&]() { return mul(x, x); },
                                        {{"x", x}});
    CHECK(report.max_rel_err < 1e-6);
    x.zero_grad();
    Tensor y = mul(x, x);
    backward(y);
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
  }
  SUBCASE("softmax row-sum conservation gives a zero gradient") {
    Tensor x = randn_for({1, 1, 3, 5}, 21);
    auto report = finite_diff_gradcheck(
        [&]() { return sum_all(softmax_rows(x, 1.0)); }, {{"x", x}});
    CHECK(report.max_rel_err < 1e-6);
    x.zero_grad();
    backward(sum_all(softmax_rows(x, 1.0)));
    for (double g : x.grad()) CHECK(std::fabs(g) < 1e-12);
  }
  SUBCASE("non-finite probes are reported") {
    Tensor x = Tensor::scalar(0.0, true);
    CHECK_THROWS_AS(finite_diff_gradcheck(
                        [&]() { return elem_log(x); }, {{"x", x}}),
                    std::runtime_error);
  }
}

TEST_CASE("per-primitive gradients match central differences over 3 seeds") {
  for (std::uint64_t seed : {101, 202, 303}) {
    Rng rng(seed);
    const Shape s{2, 3, 4, 5};
    // keep ReLU/abs/clamp inputs away from their kinks
    auto kink_free = [&](const Shape& sh) {
      Tensor t = Tensor::randn(sh, rng, 1.0, true);
      auto d = t.data_mut();
      for (auto& v : d) {
        if (std::fabs(v) < 0.05) v = v < 0 ? v - 0.1 : v + 0.1;
      }
      return t;
    };

    Tensor a = Tensor::randn(s, rng, 1.0, true);
    Tensor b = Tensor::randn(s, rng, 1.0, true);
    check_grad("add", [&]() { return sum_all(mul(add(a, b), a)); },
               {{"a", a}, {"b", b}});
    check_grad("sub", [&]() { return sum_all(mul(sub(a, b), b)); },
               {{"a", a}, {"b", b}});
    check_grad("scale+add_scalar",
               [&]() { return sum_all(add_scalar(scale(a, -1.7), 0.3)); },
               {{"a", a}});

    Tensor r = kink_free(s);
    check_grad("relu", [&]() { return sum_all(mul(relu(r), r)); }, {{"r", r}});
    check_grad("gelu", [&]() { return sum_all(gelu(a)); }, {{"a", a}});
    check_grad("sigmoid", [&]() { return sum_all(mul(sigmoid(a), a)); },
               {{"a", a}});
    check_grad("softplus", [&]() { return sum_all(softplus(a)); }, {{"a", a}});
    check_grad("abs", [&]() { return sum_all(elem_abs(r)); }, {{"r", r}});

    Tensor pos = Tensor::randn(s, rng, 0.2, true);
    {
      auto d = pos.data_mut();
      for (auto& v : d) v = 0.5 + std::fabs(v);
    }
    check_grad("log", [&]() { return sum_all(elem_log(pos)); }, {{"p", pos}});
    check_grad("pow", [&]() { return sum_all(pow_const(pos, 2.5)); },
               {{"p", pos}});
    check_grad("clamp", [&]() { return sum_all(clamp(r, -0.5, 0.5)); },
               {{"r", r}});

    Tensor cvec = Tensor::randn({1, 3, 1, 1}, rng, 1.0, true);
    Tensor cpos = Tensor::randn({1, 3, 1, 1}, rng, 0.2, true);
    {
      auto d = cpos.data_mut();
      for (auto& v : d) v = 1.0 + std::fabs(v);
    }
    check_grad("add_bcast_c", [&]() { return sum_all(mul(add_bcast_c(a, cvec), a)); },
               {{"a", a}, {"c", cvec}});
    check_grad("mul_bcast_c", [&]() { return sum_all(mul_bcast_c(a, cvec)); },
               {{"a", a}, {"c", cvec}});
    check_grad("div_bcast_c", [&]() { return sum_all(div_bcast_c(a, cpos)); },
               {{"a", a}, {"c", cpos}});

    Tensor plane = Tensor::randn({2, 1, 4, 5}, rng, 1.0, true);
    check_grad("add_bcast_plane",
               [&]() { return sum_all(mul(add_bcast_plane(a, plane), a)); },
               {{"a", a}, {"p", plane}});
    check_grad("mul_bcast_plane",
               [&]() { return sum_all(mul_bcast_plane(a, plane)); },
               {{"a", a}, {"p", plane}});

    check_grad("mean_bhw", [&]() { return sum_all(mul(mean_bhw(a), cvec)); },
               {{"a", a}, {"c", cvec}});
    check_grad("mean_c", [&]() { return sum_all(mul(mean_c(a), plane)); },
               {{"a", a}, {"p", plane}});
    check_grad("mean_all", [&]() { return mean_all(mul(a, a)); }, {{"a", a}});

    check_grad("reshape+transpose",
               [&]() {
                 return sum_all(mul(transpose_hw(reshape(a, {2, 3, 5, 4})),
                                    reshape(a, {2, 3, 4, 5})));
               },
               {{"a", a}});
    check_grad("concat+slice",
               [&]() { return sum_all(mul(slice_c(concat_c(a, b), 2, 5), a)); },
               {{"a", a}, {"b", b}});
    check_grad("pad+crop",
               [&]() {
                 return sum_all(crop_spatial(replicate_pad(a, 1, 2, 0, 1), 1,
                                             0, 4, 5));
               },
               {{"a", a}});

    Tensor m1 = Tensor::randn({2, 2, 3, 4}, rng, 1.0, true);
    Tensor m2 = Tensor::randn({2, 2, 4, 5}, rng, 1.0, true);
    check_grad("matmul", [&]() { return sum_all(mul(matmul(m1, m2), matmul(m1, m2))); },
               {{"m1", m1}, {"m2", m2}});

    Tensor cx = Tensor::randn({2, 3, 6, 7}, rng, 1.0, true);
    Tensor cw = Tensor::randn({4, 3, 3, 3}, rng, 0.4, true);
    check_grad("conv2d", [&]() { return sum_all(conv2d(cx, cw, 2, 1)); },
               {{"x", cx}, {"w", cw}});
    Tensor pw = Tensor::randn({5, 3, 1, 1}, rng, 0.5, true);
    check_grad("pointwise_conv",
               [&]() { return sum_all(mul(pointwise_conv(cx, pw), pointwise_conv(cx, pw))); },
               {{"x", cx}, {"w", pw}});
    Tensor dw = Tensor::randn({3, 1, 3, 3}, rng, 0.4, true);
    check_grad("depthwise_conv3x3",
               [&]() { return sum_all(mul(depthwise_conv3x3(cx, dw), cx)); },
               {{"x", cx}, {"w", dw}});

    Tensor tw_full = Tensor::randn({3, 2, 2, 2}, rng, 0.5, true);
    check_grad("transposed_conv full",
               [&]() { return sum_all(mul(transposed_conv_upsample(cx, 2, tw_full, 1),
                                          transposed_conv_upsample(cx, 2, tw_full, 1))); },
               {{"x", cx}, {"w", tw_full}});
    Tensor tw_dep = Tensor::randn({3, 1, 2, 2}, rng, 0.5, true);
    check_grad("transposed_conv depthwise",
               [&]() { return sum_all(mul(transposed_conv_upsample(cx, 2, tw_dep, 3),
                                          transposed_conv_upsample(cx, 2, tw_dep, 3))); },
               {{"x", cx}, {"w", tw_dep}});

    check_grad("bilinear_upsample",
               [&]() { return sum_all(mul(bilinear_upsample(cx, 2), bilinear_upsample(cx, 2))); },
               {{"x", cx}});
    check_grad("avg_pool2d",
               [&]() { return sum_all(mul(avg_pool2d(cx, 2), avg_pool2d(cx, 2))); },
               {{"x", cx}});
    check_grad("softmax_rows",
               [&]() { return sum_all(mul(softmax_rows(a, 2.0), a)); },
               {{"a", a}});

    check_grad("window roundtrip",
               [&]() {
                 auto [w, grid] = window_partition(cx, 3);
                 Tensor tok = tokens_from_windows(w, 1);
                 return sum_all(mul(window_merge(windows_from_tokens(tok, 3), grid), cx));
               },
               {{"x", cx}});
  }
}

TEST_CASE("composition determinism: identical seeds give identical bits") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = Tensor::randn({1, 4, 9, 9}, rng);
    Tensor w = Tensor::randn({4, 4, 3, 3}, rng, 0.3);
    Tensor y = softmax_rows(avg_pool2d(gelu(conv2d(x, w, 1, 1)), 2), 1.5);
    return std::vector<double>(y.data().begin(), y.data().end());
  };
  CHECK(run(42) == run(42));
}

TEST_CASE("primitives keep finite inputs finite") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    Tensor x = Tensor::randn({1, 4, 8, 8}, rng, 100.0);
    Tensor w = Tensor::randn({4, 4, 3, 3}, rng, 10.0);
    CHECK(all_finite(conv2d(x, w, 1, 1)));
    CHECK(all_finite(softmax_rows(x)));
    CHECK(all_finite(gelu(x)));
    CHECK(all_finite(sigmoid(x)));
    CHECK(all_finite(bilinear_upsample(x, 3)));
  }
}
