#pragma once

#include <array>
#include <optional>
#include <vector>

#include "sctrans/layers.hpp"
#include "sctrans/model_config.hpp"

namespace sct {

template <typename T>
using Levels = std::array<Var<T>, kLevels>;

/// Strided patch convolutions bringing every encoder level to H/P x W/P with its channel
/// count unchanged. With positional encoding enabled, a learned per-level tensor is added
/// (resampled bilinearly when the grid differs from the training grid).
template <typename T>
class PatchEmbed {
 public:
  PatchEmbed() = default;
  PatchEmbed(Builder<T>& b, const ModelConfig& cfg);

  Levels<T> forward(const Context<T>& ctx, const Levels<T>& encoder_levels) const;
  [[nodiscard]] Index flops(Index h, Index w) const;
  [[nodiscard]] const Conv2d<T>& conv(int level) const { return convs_[static_cast<std::size_t>(level)]; }
  /// Learned position tensor of a level, or null without positional encoding.
  [[nodiscard]] Parameter<T>* position(int level) const { return position_[static_cast<std::size_t>(level)]; }

 private:
  std::array<Conv2d<T>, kLevels> convs_;
  std::array<Parameter<T>*, kLevels> position_{};
  Index patch_ = 16;
};

/// Channel cross-attention: each level's channels attend over the concatenation of all
/// levels' channels, with depthwise spatial embedding of queries, keys and values.
template <typename T>
class SSCA {
 public:
  SSCA() = default;
  SSCA(Builder<T>& b, const std::string& name, const ModelConfig& cfg);

  /// `normed` are the per-level normalized inputs, `normed_all` the normalized concatenation.
  Levels<T> forward(const Context<T>& ctx, const Levels<T>& normed, const Var<T>& normed_all) const;
  [[nodiscard]] Index flops(Index h, Index w) const;

  [[nodiscard]] const Conv2d<T>& query_pointwise(int level) const { return q_pw_[static_cast<std::size_t>(level)]; }
  [[nodiscard]] const Conv2d<T>& key_pointwise() const { return k_pw_; }
  [[nodiscard]] const Conv2d<T>& value_pointwise() const { return v_pw_; }
  [[nodiscard]] double temperature() const { return temperature_; }

 private:
  Var<T> embed(const Context<T>& ctx, const Conv2d<T>& pw, const std::optional<Conv2d<T>>& dw,
               const Var<T>& x) const;

  std::array<Conv2d<T>, kLevels> q_pw_;
  std::array<std::optional<Conv2d<T>>, kLevels> q_dw_;
  Conv2d<T> k_pw_, v_pw_;
  std::optional<Conv2d<T>> k_dw_, v_dw_;
  std::array<Conv2d<T>, kLevels> proj_;
  std::array<Index, kLevels> channels_{};
  Index total_ = 0;
  Index heads_ = 1;
  double temperature_ = 1;
};

/// Feed-forward unit: layer norm, expansion, parallel 3x3 / 5x5 depthwise branches with
/// GELU, contraction, then a channel gate from pooled statistics and a residual add.
template <typename T>
class CFN {
 public:
  CFN() = default;
  CFN(Builder<T>& b, const std::string& name, Index channels, const ModelConfig& cfg);

  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const;
  [[nodiscard]] Index flops(Index h, Index w) const;
  [[nodiscard]] Index expanded() const { return expand_.spec().out_channels; }

 private:
  LayerNorm2d<T> norm_;
  Conv2d<T> expand_, dw3_, dw5_, contract_;
  Parameter<T>* gate_kernel_ = nullptr;
  bool gate_sigmoid_ = true;
};

/// One block: P_i = SSCA(LN(I_i), LN([I_1..I_4])) + I_i, O_i = CFN_i(P_i).
template <typename T>
class SCTBlock {
 public:
  SCTBlock() = default;
  SCTBlock(Builder<T>& b, const std::string& name, const ModelConfig& cfg);

  Levels<T> forward(const Context<T>& ctx, const Levels<T>& in) const;
  [[nodiscard]] Index flops(Index h, Index w) const;
  [[nodiscard]] const SSCA<T>& attention() const { return ssca_; }

 private:
  std::array<LayerNorm2d<T>, kLevels> norms_;
  LayerNorm2d<T> norm_all_;
  SSCA<T> ssca_;
  std::array<CFN<T>, kLevels> cfn_;
};

/// Bilinear upsampling to each encoder scale followed by 1x1 conv, BN and ReLU; the
/// result is added to the encoder feature.
template <typename T>
class FeatureMapper {
 public:
  FeatureMapper() = default;
  FeatureMapper(Builder<T>& b, const ModelConfig& cfg);

  Levels<T> forward(const Context<T>& ctx, const Levels<T>& coarse, const Levels<T>& encoder_levels) const;
  [[nodiscard]] Index flops(Index h, Index w) const;

 private:
  std::array<ConvBnRelu<T>, kLevels> maps_;
};

/// The full skip path: patch embedding, the stacked blocks, and mapping back.
template <typename T>
class ChannelTransformer {
 public:
  ChannelTransformer() = default;
  ChannelTransformer(Builder<T>& b, const ModelConfig& cfg);

  Levels<T> forward(const Context<T>& ctx, const Levels<T>& encoder_levels) const;
  [[nodiscard]] Index flops(Index h, Index w) const;
  [[nodiscard]] const std::vector<SCTBlock<T>>& blocks() const { return blocks_; }
  [[nodiscard]] const PatchEmbed<T>& embed() const { return embed_; }
  [[nodiscard]] const FeatureMapper<T>& mapper() const { return mapper_; }

 private:
  PatchEmbed<T> embed_;
  std::vector<SCTBlock<T>> blocks_;
  FeatureMapper<T> mapper_;
  Index patch_ = 16;
};

}  // namespace sct
