#include "sctrans/decoder.hpp"

namespace sct {

template <typename T>
CCAGate<T>::CCAGate(Builder<T>& b, const std::string& name, Index deep_channels, Index skip_channels)
    : linear_(b, name + ".linear", ConvSpec::square(deep_channels, skip_channels, 1)) {}

template <typename T>
Var<T> CCAGate<T>::gate(const Context<T>& ctx, const Var<T>& deeper) const {
  return sigmoid(linear_.forward(ctx, global_avg_pool(deeper)));
}

template <typename T>
Var<T> CCAGate<T>::forward(const Context<T>& ctx, const Var<T>& deeper, const Var<T>& skip) const {
  return mul_channel(gate(ctx, deeper), skip);
}

template <typename T>
DecoderStage<T>::DecoderStage(Builder<T>& b, const std::string& name, Index deep_channels,
                              Index skip_channels, Index out_channels)
    : cca_(b, name + ".cca", deep_channels, skip_channels),
      cbl1_(b, name + ".cbl1", ConvSpec::square(skip_channels + deep_channels, out_channels, 3, 1, 1)),
      cbl2_(b, name + ".cbl2", ConvSpec::square(out_channels, out_channels, 3, 1, 1)) {}

template <typename T>
Var<T> DecoderStage<T>::forward(const Context<T>& ctx, const Var<T>& deeper, const Var<T>& skip) const {
  if (deeper.shape().rank() != 4 || skip.shape().rank() != 4 || deeper.dim(0) != skip.dim(0) ||
      skip.dim(2) != 2 * deeper.dim(2) || skip.dim(3) != 2 * deeper.dim(3)) {
    throw ConfigError("decoder: skip " + skip.shape().str() + " must be twice the extents of " +
                      deeper.shape().str());
  }
  const Var<T> up = resample_bilinear(deeper, skip.dim(2), skip.dim(3));
  const Var<T> gated = cca_.forward(ctx, up, skip);
  return cbl2_.forward(ctx, cbl1_.forward(ctx, concat_channels<T>({gated, up})));
}

template <typename T>
Index DecoderStage<T>::flops(Index h, Index w) const {
  return cca_.flops() + cbl1_.conv().spec().flops(h, w) + cbl2_.conv().spec().flops(h, w);
}

template <typename T>
Decoder<T>::Decoder(Builder<T>& b, const ModelConfig& cfg) {
  for (int i = kLevels - 1; i >= 0; --i) {
    const auto li = static_cast<std::size_t>(i);
    const Index deep = i == kLevels - 1 ? cfg.bottleneck_channels : cfg.decoder_channels(i + 1);
    stages_[li] = DecoderStage<T>(b, "decoder.stage" + std::to_string(i + 1), deep, cfg.channels[li],
                                  cfg.decoder_channels(i));
  }
}

template <typename T>
Features<T> Decoder<T>::forward(const Context<T>& ctx, const Levels<T>& skips, const Var<T>& bottleneck) const {
  Features<T> f;
  f[kLevels] = bottleneck;
  for (int i = kLevels - 1; i >= 0; --i) {
    const auto li = static_cast<std::size_t>(i);
    f[li] = stages_[li].forward(ctx, f[li + 1], skips[li]);
  }
  return f;
}

template <typename T>
Index Decoder<T>::flops(Index h, Index w) const {
  Index f = 0;
  for (int i = 0; i < kLevels; ++i) f += stages_[static_cast<std::size_t>(i)].flops(h >> i, w >> i);
  return f;
}

template <typename T>
SupervisionHeads<T>::SupervisionHeads(Builder<T>& b, const ModelConfig& cfg) {
  const int n = cfg.deep_supervision ? kMaps : 1;
  for (int i = 0; i < n; ++i) {
    heads_.emplace_back(b, "head" + std::to_string(i + 1), ConvSpec::square(cfg.side_channels(i), 1, 1));
  }
  if (cfg.deep_supervision) fusion_.emplace(b, "head.fusion", ConvSpec::square(kMaps, 1, 1));
}

template <typename T>
SaliencyMaps<T> SupervisionHeads<T>::forward(const Context<T>& ctx, const Features<T>& f, Index h,
                                             Index w) const {
  SaliencyMaps<T> out;
  if (!fusion_) {
    out.fused = sigmoid(heads_[0].forward(ctx, f[0]));
    return out;
  }
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    Var<T> m = sigmoid(heads_[i].forward(ctx, f[i]));
    out.side.push_back(resample_bilinear(m, h, w));
  }
  out.fused = sigmoid(fusion_->forward(ctx, concat_channels(out.side)));
  return out;
}

template <typename T>
Index SupervisionHeads<T>::flops(Index h, Index w) const {
  Index f = 0;
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    const auto shift = static_cast<Index>(std::min<std::size_t>(i, kLevels));
    f += heads_[i].spec().flops(h >> shift, w >> shift);
  }
  if (fusion_) f += fusion_->spec().flops(h, w);
  return f;
}

template <typename T>
LossTerms<T> total_loss(const SaliencyMaps<T>& maps, const Tensor<T>& target, const LossWeights& weights) {
  LossTerms<T> out;
  const Var<T> fused = bce(maps.fused, target);
  out.fused = static_cast<double>(fused.value()[0]);
  Var<T> total = scale(fused, weights.fused);
  for (std::size_t i = 0; i < maps.side.size(); ++i) {
    const Var<T> term = bce(maps.side[i], target);
    out.side.push_back(static_cast<double>(term.value()[0]));
    total = add(total, scale(term, weights.side.at(i)));
  }
  out.total = total;
  return out;
}

template class CCAGate<float>;
template class CCAGate<double>;
template class DecoderStage<float>;
template class DecoderStage<double>;
template class Decoder<float>;
template class Decoder<double>;
template class SupervisionHeads<float>;
template class SupervisionHeads<double>;
template LossTerms<float> total_loss(const SaliencyMaps<float>&, const Tensor<float>&, const LossWeights&);
template LossTerms<double> total_loss(const SaliencyMaps<double>&, const Tensor<double>&, const LossWeights&);

}  // namespace sct
