#include "sctrans/model.hpp"

namespace sct {

template <typename T>
SCTransNet<T>::SCTransNet(const ModelConfig& config) : config_(config), store_(std::make_unique<ParamStore<T>>()) {
  config_.validate();
  Builder<T> b(*store_, config_.seed);
  encoder_ = Encoder<T>(b, config_);
  transformer_ = ChannelTransformer<T>(b, config_);
  decoder_ = Decoder<T>(b, config_);
  heads_ = SupervisionHeads<T>(b, config_);
}

template <typename T>
SaliencyMaps<T> SCTransNet<T>::forward(const Context<T>& ctx, const Var<T>& image) const {
  const Shape& s = image.shape();
  const Index m = config_.spatial_multiple();
  if (s.rank() != 4 || s[1] != config_.in_channels) {
    throw PreconditionError("model: expected a (b, " + std::to_string(config_.in_channels) +
                            ", H, W) image, got " + s.str());
  }
  if (s[2] % m != 0 || s[3] % m != 0 || s[2] == 0 || s[3] == 0) {
    throw PreconditionError("model: image extents " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                            " must be positive multiples of " + std::to_string(m) +
                            "; pad the input with prepare_eval first");
  }
  const EncoderFeatures<T> e = encoder_.forward(ctx, image);
  const Levels<T> skips = transformer_.forward(ctx, e.levels);
  const Features<T> f = decoder_.forward(ctx, skips, e.bottleneck);
  return heads_.forward(ctx, f, s[2], s[3]);
}

template <typename T>
Tensor<T> SCTransNet<T>::predict(const Tensor<T>& image) const {
  const Context<T> ctx{};
  return forward(ctx, Var<T>::constant(image)).fused.value();
}

template <typename T>
std::map<std::string, Index> SCTransNet<T>::param_breakdown() const {
  std::map<std::string, Index> out;
  for (const char* prefix : {"encoder.", "embed.", "sctb", "mapper.", "decoder.", "head"}) {
    out[prefix] = store_->count_trainable(prefix);
  }
  return out;
}

template <typename T>
FlopBreakdown SCTransNet<T>::count_flops(Index height, Index width) const {
  FlopBreakdown f;
  f.encoder = encoder_.flops(height, width);
  f.transformer = transformer_.flops(height, width);
  f.decoder = decoder_.flops(height, width);
  f.heads = heads_.flops(height, width);
  return f;
}

template class SCTransNet<float>;
template class SCTransNet<double>;

}  // namespace sct
