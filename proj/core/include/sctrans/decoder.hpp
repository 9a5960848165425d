#pragma once

#include <array>
#include <optional>
#include <vector>

#include "sctrans/layers.hpp"
#include "sctrans/model_config.hpp"
#include "sctrans/sctb.hpp"

namespace sct {

/// Per-channel gate on a skip feature computed from the pooled deeper feature:
/// sigmoid(W * GAP(deeper) + b).
template <typename T>
class CCAGate {
 public:
  CCAGate() = default;
  CCAGate(Builder<T>& b, const std::string& name, Index deep_channels, Index skip_channels);

  /// Returns the (b, skip_channels, 1, 1) gate.
  Var<T> gate(const Context<T>& ctx, const Var<T>& deeper) const;
  Var<T> forward(const Context<T>& ctx, const Var<T>& deeper, const Var<T>& skip) const;
  [[nodiscard]] Index flops() const { return linear_.spec().flops(1, 1); }
  [[nodiscard]] const Conv2d<T>& linear() const { return linear_; }

 private:
  Conv2d<T> linear_;
};

/// Upsample the deeper feature to the skip's extents, gate the skip, concatenate
/// [gated skip, upsampled] and decode with two conv-BN-ReLU blocks.
template <typename T>
class DecoderStage {
 public:
  DecoderStage() = default;
  DecoderStage(Builder<T>& b, const std::string& name, Index deep_channels, Index skip_channels,
               Index out_channels);

  Var<T> forward(const Context<T>& ctx, const Var<T>& deeper, const Var<T>& skip) const;
  [[nodiscard]] Index flops(Index h, Index w) const;
  [[nodiscard]] const CCAGate<T>& gate() const { return cca_; }

 private:
  CCAGate<T> cca_;
  ConvBnRelu<T> cbl1_, cbl2_;
};

template <typename T>
using Features = std::array<Var<T>, kMaps>;  // F1..F5

template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(Builder<T>& b, const ModelConfig& cfg);

  /// F5 is the bottleneck itself; F4..F1 come from the stages in order.
  Features<T> forward(const Context<T>& ctx, const Levels<T>& skips, const Var<T>& bottleneck) const;
  [[nodiscard]] Index flops(Index h, Index w) const;
  [[nodiscard]] const DecoderStage<T>& stage(int level) const { return stages_[static_cast<std::size_t>(level)]; }

 private:
  std::array<DecoderStage<T>, kLevels> stages_;
};

template <typename T>
struct SaliencyMaps {
  Var<T> fused;              // (b, 1, H, W)
  std::vector<Var<T>> side;  // M1..M5 at (b, 1, H, W); empty without deep supervision
};

/// 1x1 conv + sigmoid heads per feature, bilinear upsampling to the input size and a
/// 1x1 fusion conv over the five maps. Without deep supervision only the finest head is
/// kept and its map is the output.
template <typename T>
class SupervisionHeads {
 public:
  SupervisionHeads() = default;
  SupervisionHeads(Builder<T>& b, const ModelConfig& cfg);

  SaliencyMaps<T> forward(const Context<T>& ctx, const Features<T>& f, Index h, Index w) const;
  [[nodiscard]] Index flops(Index h, Index w) const;

 private:
  std::vector<Conv2d<T>> heads_;
  std::optional<Conv2d<T>> fusion_;
};

template <typename T>
struct LossTerms {
  Var<T> total;
  std::vector<double> side;  // unweighted l_1..l_5 (empty without deep supervision)
  double fused = 0;          // unweighted l_fused
};

/// Weighted sum of the BCE of each side map and the fused map against the mask.
template <typename T>
LossTerms<T> total_loss(const SaliencyMaps<T>& maps, const Tensor<T>& target, const LossWeights& weights);

}  // namespace sct
