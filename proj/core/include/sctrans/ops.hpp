#pragma once

#include <vector>

#include "sctrans/autograd.hpp"
#include "sctrans/tensor.hpp"

namespace sct {

/// Geometry of a 2-D convolution. Covers pointwise, depthwise and grouped cases.
struct ConvSpec {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel_h = 1;
  Index kernel_w = 1;
  Index stride_h = 1;
  Index stride_w = 1;
  Index pad_h = 0;
  Index pad_w = 0;
  Index groups = 1;
  bool has_bias = true;

  static ConvSpec square(Index in, Index out, Index kernel, Index stride = 1, Index pad = 0,
                         Index groups = 1, bool bias = true) {
    return {in, out, kernel, kernel, stride, stride, pad, pad, groups, bias};
  }
  static ConvSpec depthwise(Index channels, Index kernel, bool bias = false) {
    return square(channels, channels, kernel, 1, kernel / 2, channels, bias);
  }

  [[nodiscard]] bool is_depthwise() const {
    return groups > 1 && groups == in_channels && groups == out_channels;
  }
  void validate() const;
  [[nodiscard]] Shape weight_shape() const {
    return {out_channels, in_channels / groups, kernel_h, kernel_w};
  }
  [[nodiscard]] Index param_count() const {
    return weight_shape().numel() + (has_bias ? out_channels : 0);
  }
  [[nodiscard]] Index out_h(Index h) const { return (h + 2 * pad_h - kernel_h) / stride_h + 1; }
  [[nodiscard]] Index out_w(Index w) const { return (w + 2 * pad_w - kernel_w) / stride_w + 1; }
  /// Forward cost as 2 x multiply-accumulates for one sample of extents h x w.
  [[nodiscard]] Index flops(Index h, Index w) const {
    return 2 * out_channels * (in_channels / groups) * kernel_h * kernel_w * out_h(h) * out_w(w);
  }
};

enum class Activation { relu, gelu, sigmoid };

// Thread-local tally of forward convolution/matmul work (2 x MAC), used to cross-check
// the analytic FLOP count.
Index flop_counter();
void reset_flop_counter();

template <typename T>
Var<T> conv2d(const Var<T>& x, const ConvSpec& spec, const Var<T>& weight, const Var<T>& bias = {});

/// 1-D convolution along the channel axis of a pooled (b, c, 1, 1) map, zero padded.
template <typename T>
Var<T> conv1d_channel(const Var<T>& x, const Var<T>& kernel);

/// Normalizes over channels at every (b, y, x) position.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps = 1e-5);

/// Normalizes every (b, c) plane over its spatial entries. Affine terms are optional.
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma = {}, const Var<T>& beta = {},
                     double eps = 1e-5);

/// Per-channel normalization over (b, y, x). In training mode batch statistics are used
/// and the running estimates are updated in place; otherwise the running estimates are used.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                  double momentum = 0.1, double eps = 1e-5);

/// Bilinear resampling with the align-corners=false convention.
template <typename T>
Var<T> resample_bilinear(const Var<T>& x, Index out_h, Index out_w);

template <typename T>
Var<T> max_pool2x2(const Var<T>& x);

template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x);

template <typename T>
Var<T> activate(const Var<T>& x, Activation kind);
template <typename T>
Var<T> relu(const Var<T>& x) { return activate(x, Activation::relu); }
template <typename T>
Var<T> gelu(const Var<T>& x) { return activate(x, Activation::gelu); }
template <typename T>
Var<T> sigmoid(const Var<T>& x) { return activate(x, Activation::sigmoid); }

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
/// x + shared, where `shared` has batch extent 1 and is reused for every sample.
template <typename T>
Var<T> add_broadcast(const Var<T>& x, const Var<T>& shared);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
/// Broadcast product of a (b, c, 1, 1) gate with a (b, c, h, w) map.
template <typename T>
Var<T> mul_channel(const Var<T>& gate, const Var<T>& x);
template <typename T>
Var<T> scale(const Var<T>& x, double factor);

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_channels(const Var<T>& x, Index begin, Index count);
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// Batched product of rank-3 tensors (batch, rows, cols) with optional transposes.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_a = false, bool transpose_b = false);

template <typename T>
Var<T> sum(const Var<T>& x);

/// Weighted sum of the elements of `x`; `weights` is a constant of the same shape.
template <typename T>
Var<T> dot(const Var<T>& x, const Tensor<T>& weights);

/// Mean binary cross entropy with probabilities clamped to [1e-7, 1 - 1e-7].
template <typename T>
Var<T> bce(const Var<T>& probs, const Tensor<T>& target);

inline constexpr double kBceClamp = 1e-7;

}  // namespace sct
