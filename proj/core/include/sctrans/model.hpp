#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sctrans/decoder.hpp"
#include "sctrans/encoder.hpp"
#include "sctrans/model_config.hpp"
#include "sctrans/param_store.hpp"
#include "sctrans/sctb.hpp"

namespace sct {

/// Forward cost split by component, in FLOPs (2 x multiply-accumulate).
struct FlopBreakdown {
  Index encoder = 0;
  Index transformer = 0;  // patch embedding, blocks and mapping back
  Index decoder = 0;
  Index heads = 0;
  [[nodiscard]] Index total() const { return encoder + transformer + decoder + heads; }
};

/// U-shaped detector: residual encoder, cross-level channel transformer on the skip
/// connections, gated decoder and deeply supervised saliency heads.
template <typename T>
class SCTransNet {
 public:
  /// Validates the configuration and initializes parameters from `config.seed`.
  explicit SCTransNet(const ModelConfig& config);

  SCTransNet(const SCTransNet&) = delete;
  SCTransNet& operator=(const SCTransNet&) = delete;
  SCTransNet(SCTransNet&&) noexcept = default;
  SCTransNet& operator=(SCTransNet&&) noexcept = default;

  /// `image` is (b, in_channels, H, W) with H, W multiples of 16 (and of the patch size).
  SaliencyMaps<T> forward(const Context<T>& ctx, const Var<T>& image) const;
  /// Eval-mode fused map for a standardized (b, c, H, W) image.
  Tensor<T> predict(const Tensor<T>& image) const;

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] ParamStore<T>& params() { return *store_; }
  [[nodiscard]] const ParamStore<T>& params() const { return *store_; }

  /// Trainable scalars; running statistics are not counted.
  [[nodiscard]] Index count_params() const { return store_->count_trainable(); }
  [[nodiscard]] std::map<std::string, Index> param_breakdown() const;
  [[nodiscard]] FlopBreakdown count_flops(Index height, Index width) const;

  [[nodiscard]] const Encoder<T>& encoder() const { return encoder_; }
  [[nodiscard]] const ChannelTransformer<T>& transformer() const { return transformer_; }
  [[nodiscard]] const Decoder<T>& decoder() const { return decoder_; }
  [[nodiscard]] const SupervisionHeads<T>& heads() const { return heads_; }

 private:
  ModelConfig config_;
  std::unique_ptr<ParamStore<T>> store_;
  Encoder<T> encoder_;
  ChannelTransformer<T> transformer_;
  Decoder<T> decoder_;
  SupervisionHeads<T> heads_;
};

}  // namespace sct
