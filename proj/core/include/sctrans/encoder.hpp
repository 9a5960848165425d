#pragma once

#include <array>
#include <optional>
#include <vector>

#include "sctrans/layers.hpp"
#include "sctrans/model_config.hpp"

namespace sct {

/// Basic residual block: two 3x3 conv+BN with ReLU between, a 1x1 conv+BN projection
/// shortcut when channel counts differ, ReLU after the sum.
template <typename T>
class ResidualStage {
 public:
  ResidualStage() = default;
  ResidualStage(Builder<T>& b, const std::string& name, Index in_channels, Index out_channels);

  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const;
  [[nodiscard]] Index flops(Index h, Index w) const;
  [[nodiscard]] bool has_projection() const { return proj_.has_value(); }
  [[nodiscard]] Index out_channels() const { return conv1_.spec().out_channels; }

 private:
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn1_;
  Conv2d<T> conv2_;
  BatchNorm2d<T> bn2_;
  std::optional<Conv2d<T>> proj_;
  std::optional<BatchNorm2d<T>> proj_bn_;
};

template <typename T>
struct EncoderFeatures {
  std::array<Var<T>, kLevels> levels;  // E1..E4
  Var<T> bottleneck;                   // E5
};

/// Four residual stages separated by 2x2 max-pooling, plus a pooled bottleneck stage.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(Builder<T>& b, const ModelConfig& cfg);

  EncoderFeatures<T> forward(const Context<T>& ctx, const Var<T>& image) const;
  [[nodiscard]] Index flops(Index h, Index w) const;
  [[nodiscard]] const ResidualStage<T>& stage(int i) const { return stages_[static_cast<std::size_t>(i)]; }

 private:
  std::vector<ResidualStage<T>> stages_;
};

}  // namespace sct
