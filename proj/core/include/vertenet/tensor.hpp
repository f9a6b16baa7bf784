// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vertenet/rng.hpp"

namespace vertenet {

// Dense rank-4 shape (batch, channels, height, width). Weights, scalars and
// matrices are carried in the same layout: a 1x1 conv kernel is
// (c_out, c_in, 1, 1), a scalar is (1, 1, 1, 1), a matrix is (1, 1, m, n).
struct Shape {
  int b = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(b) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

namespace detail {

// One recorded primitive application. The tape is the DAG of nodes reachable
// from a result: parents are the inputs, backward_fn replays the primitive's
// derivative rule, accumulating into the parents' grad buffers.
struct TapeNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<double> grad;
  std::vector<std::shared_ptr<TapeNode>> parents;
  std::function<void(TapeNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Value handle over a tape node. Copies share storage; data is immutable
// after construction except through data_mut(), which is reserved for
// leaves (parameter updates and finite-difference probing).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& s, bool requires_grad = false);
  static Tensor full(const Shape& s, double value, bool requires_grad = false);
  static Tensor from_vector(const Shape& s, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(const Shape& s, Rng& rng, double stdev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }
  bool requires_grad() const;
  void set_requires_grad(bool v);

  std::span<const double> data() const;
  std::span<double> data_mut();
  double value() const;  // the single entry of a (1,1,1,1) tensor
  double at(int b, int c, int y, int x) const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  Tensor detach() const;  // shares data, drops graph edges and grad flow
  Tensor clone() const;   // deep copy, leaf

  std::shared_ptr<detail::TapeNode> node() const { return node_; }

 private:
  friend Tensor wrap_node(std::shared_ptr<detail::TapeNode> n);
  std::shared_ptr<detail::TapeNode> node_;
};

// Reverse pass over the tape reachable from `root` (a scalar): seeds d root
// with 1 and replays every recorded primitive's derivative rule in reverse
// topological order. Leaf grads persist until zero_grad().
void backward(const Tensor& root);

// Suppresses tape recording for its lifetime (current thread); forwards run
// value-only. Used by inference paths and finite-difference probing.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

bool all_finite(const Tensor& t);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor elem_log(const Tensor& x);
Tensor elem_abs(const Tensor& x);
Tensor pow_const(const Tensor& x, double exponent);
Tensor clamp(const Tensor& x, double lo, double hi);

// ---- broadcasts ----
// channel vector p has shape (1, C, 1, 1) with C == x.c
Tensor add_bcast_c(const Tensor& x, const Tensor& p);
Tensor mul_bcast_c(const Tensor& x, const Tensor& p);
Tensor div_bcast_c(const Tensor& x, const Tensor& p);
// plane p has shape (B, 1, H, W) matching x's batch and spatial dims
Tensor add_bcast_plane(const Tensor& x, const Tensor& p);
Tensor mul_bcast_plane(const Tensor& x, const Tensor& p);

// ---- reductions ----
Tensor sum_all(const Tensor& x);   // -> (1,1,1,1)
Tensor mean_all(const Tensor& x);  // -> (1,1,1,1)
Tensor mean_bhw(const Tensor& x);  // per-channel mean  -> (1,C,1,1)
Tensor mean_c(const Tensor& x);    // per-position mean -> (B,1,H,W)

// ---- structure ----
Tensor reshape(const Tensor& x, const Shape& s);
Tensor transpose_hw(const Tensor& x);
Tensor concat_c(const Tensor& a, const Tensor& b);
Tensor slice_c(const Tensor& x, int c0, int c1);  // half-open [c0, c1)
Tensor replicate_pad(const Tensor& x, int top, int bottom, int left, int right);
Tensor crop_spatial(const Tensor& x, int top, int left, int h, int w);

// ---- linear algebra / convolution ----
// Batched matrix product over the trailing dims: (b,c,m,k) x (b,c,k,n).
Tensor matmul(const Tensor& a, const Tensor& b);

// 2-D convolution, zero padding. Weights (c_out, c_in, kh, kw), optional
// bias (1, c_out, 1, 1). Model code that wants edge-replication padding
// composes replicate_pad + conv2d(pad = 0).
Tensor conv2d(const Tensor& x, const Tensor& w, int stride = 1, int pad = 0);
Tensor pointwise_conv(const Tensor& x, const Tensor& w);  // 1x1, stride 1
Tensor depthwise_conv3x3(const Tensor& x, const Tensor& w);  // w (C,1,3,3), pad 1

// Transposed convolution with kernel r x r and stride r; output spatial dims
// are exactly r times the input's. groups == 1 takes weights (c_in, c_out, r, r);
// groups == c_in takes per-channel weights (c, 1, r, r).
Tensor transposed_conv_upsample(const Tensor& x, int r, const Tensor& w,
                                int groups = 1);

Tensor bilinear_upsample(const Tensor& x, int factor);

// Mean pooling by r. Non-divisible spatial dims are first padded to the next
// multiple of r by edge replication, so the output is (B, C, ceil(H/r), ceil(W/r)).
Tensor avg_pool2d(const Tensor& x, int r);

// ---- softmax ----
// Row softmax over the trailing dim, stabilized by row-max subtraction.
Tensor softmax_rows(const Tensor& m);
// Logits divided by a positive temperature first. The tensor overload
// broadcasts beta (1, C, 1, 1) across rows of each channel and is
// differentiable in beta.
Tensor softmax_rows(const Tensor& m, double beta);
Tensor softmax_rows(const Tensor& m, const Tensor& beta);

// ---- windowing ----
struct WindowGrid {
  int batch = 0;
  int grid_h = 0;   // window count along height
  int grid_w = 0;   // window count along width
  int p = 0;        // window side length
  int orig_h = 0;   // pre-padding spatial dims, restored by window_merge
  int orig_w = 0;
  int windows() const { return batch * grid_h * grid_w; }
};

// Non-overlapping p x p tiling in raster order; pads to a multiple of p by
// edge replication first. window_merge inverts it exactly.
std::pair<Tensor, WindowGrid> window_partition(const Tensor& x, int p);
Tensor window_merge(const Tensor& windows, const WindowGrid& grid);

// (N, heads*d, p, p) -> (N, heads, p*p, d): one token row per window cell.
Tensor tokens_from_windows(const Tensor& xw, int heads);
Tensor windows_from_tokens(const Tensor& t, int p);

}  // namespace vertenet
