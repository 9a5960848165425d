#pragma once

#include <array>
#include <cstdint>

#include "sctrans/tensor.hpp"

namespace sct {

inline constexpr int kLevels = 4;
inline constexpr int kMaps = 5;

/// Loss weights for the five side outputs and the fused map.
struct LossWeights {
  std::array<double, kMaps> side{1, 1, 1, 1, 1};
  double fused = 1;
};

/// Every architectural and training hyperparameter, including ablation toggles.
struct ModelConfig {
  // Architecture.
  std::array<Index, kLevels> channels{32, 64, 128, 256};
  Index bottleneck_channels = 512;
  Index in_channels = 1;
  Index patch_size = 16;
  Index num_sctb = 4;
  double expansion = 2.66;

  // Ablation toggles.
  bool deep_supervision = true;
  bool positional_encoding = false;
  Index num_heads = 1;
  bool spatial_embedding = true;
  bool gslc = true;
  bool gate_sigmoid = true;
  // Training-resolution grid of the learned position tensors (only with positional_encoding).
  Index image_size = 256;

  // Training.
  double lr0 = 1e-3;
  double lr_min = 1e-5;
  Index batch_size = 16;
  Index epochs = 1000;
  std::uint64_t seed = 0;
  Index crop_size = 256;
  bool augment = true;
  LossWeights loss_weights{};

  // Evaluation.
  double threshold = 0.5;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  [[nodiscard]] Index total_channels() const { return channels[0] + channels[1] + channels[2] + channels[3]; }
  /// floor(expansion * c) rounded down to even so the CFN split is exact.
  [[nodiscard]] Index expanded_channels(Index c) const;
  /// Output channels of decoder stage i (0-based level): C_{i-1} with C_0 := C_1.
  [[nodiscard]] Index decoder_channels(int level) const {
    return level == 0 ? channels[0] : channels[static_cast<std::size_t>(level - 1)];
  }
  /// Channels of side output F_{i+1}; the deepest is the bottleneck.
  [[nodiscard]] Index side_channels(int map) const {
    return map == kLevels ? bottleneck_channels : decoder_channels(map);
  }
  /// Smallest extent all inputs must be a multiple of.
  [[nodiscard]] Index spatial_multiple() const { return patch_size > 16 ? patch_size : 16; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline bool operator==(const LossWeights& a, const LossWeights& b) {
  return a.side == b.side && a.fused == b.fused;
}

}  // namespace sct
