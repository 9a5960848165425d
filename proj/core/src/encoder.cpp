#include "sctrans/encoder.hpp"

namespace sct {

template <typename T>
ResidualStage<T>::ResidualStage(Builder<T>& b, const std::string& name, Index in_channels, Index out_channels)
    : conv1_(b, name + ".conv1", ConvSpec::square(in_channels, out_channels, 3, 1, 1)),
      bn1_(b, name + ".bn1", out_channels),
      conv2_(b, name + ".conv2", ConvSpec::square(out_channels, out_channels, 3, 1, 1)),
      bn2_(b, name + ".bn2", out_channels) {
  if (in_channels != out_channels) {
    proj_.emplace(b, name + ".shortcut.conv", ConvSpec::square(in_channels, out_channels, 1));
    proj_bn_.emplace(b, name + ".shortcut.bn", out_channels);
  }
}

template <typename T>
Var<T> ResidualStage<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  Var<T> y = relu(bn1_.forward(ctx, conv1_.forward(ctx, x)));
  y = bn2_.forward(ctx, conv2_.forward(ctx, y));
  Var<T> shortcut = proj_ ? proj_bn_->forward(ctx, proj_->forward(ctx, x)) : x;
  return relu(add(y, shortcut));
}

template <typename T>
Index ResidualStage<T>::flops(Index h, Index w) const {
  Index f = conv1_.spec().flops(h, w) + conv2_.spec().flops(h, w);
  if (proj_) f += proj_->spec().flops(h, w);
  return f;
}

template <typename T>
Encoder<T>::Encoder(Builder<T>& b, const ModelConfig& cfg) {
  Index in = cfg.in_channels;
  for (int i = 0; i < kLevels; ++i) {
    const Index out = cfg.channels[static_cast<std::size_t>(i)];
    stages_.emplace_back(b, "encoder.stage" + std::to_string(i + 1), in, out);
    in = out;
  }
  stages_.emplace_back(b, "encoder.bottleneck", in, cfg.bottleneck_channels);
}

template <typename T>
EncoderFeatures<T> Encoder<T>::forward(const Context<T>& ctx, const Var<T>& image) const {
  const Shape& s = image.shape();
  if (s.rank() != 4 || s[2] % 16 != 0 || s[3] % 16 != 0) {
    throw PreconditionError("encoder: input " + s.str() +
                            " must be (b, c, H, W) with H, W divisible by 16; pad with prepare_eval");
  }
  EncoderFeatures<T> out;
  Var<T> x = image;
  for (int i = 0; i < kLevels; ++i) {
    if (i > 0) x = max_pool2x2(x);
    x = stages_[static_cast<std::size_t>(i)].forward(ctx, x);
    out.levels[static_cast<std::size_t>(i)] = x;
  }
  out.bottleneck = stages_.back().forward(ctx, max_pool2x2(x));
  return out;
}

template <typename T>
Index Encoder<T>::flops(Index h, Index w) const {
  Index f = 0;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const Index shift = static_cast<Index>(std::min<std::size_t>(i, kLevels));
    f += stages_[i].flops(h >> shift, w >> shift);
  }
  return f;
}

template class ResidualStage<float>;
template class ResidualStage<double>;
template class Encoder<float>;
template class Encoder<double>;

}  // namespace sct
