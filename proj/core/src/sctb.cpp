#include "sctrans/sctb.hpp"

#include <cmath>

namespace sct {

namespace {

std::string level_name(const std::string& base, int i) { return base + std::to_string(i + 1); }

}  // namespace

template <typename T>
PatchEmbed<T>::PatchEmbed(Builder<T>& b, const ModelConfig& cfg) : patch_(cfg.patch_size) {
  for (int i = 0; i < kLevels; ++i) {
    const auto li = static_cast<std::size_t>(i);
    const Index c = cfg.channels[li];
    const Index k = cfg.patch_size >> i;
    convs_[li] = Conv2d<T>(b, level_name("embed.level", i), ConvSpec::square(c, c, k, k));
    if (cfg.positional_encoding) {
      const Index g = cfg.image_size / cfg.patch_size;
      position_[li] = &b.constant(level_name("embed.position", i), {1, c, g, g}, T(0));
    }
  }
}

template <typename T>
Levels<T> PatchEmbed<T>::forward(const Context<T>& ctx, const Levels<T>& e) const {
  const Index h = e[0].dim(2), w = e[0].dim(3);
  if (h % patch_ != 0 || w % patch_ != 0) {
    throw PreconditionError("patch embedding: level-1 extents " + e[0].shape().str() +
                            " not divisible by patch size " + std::to_string(patch_));
  }
  Levels<T> out;
  for (int i = 0; i < kLevels; ++i) {
    const auto li = static_cast<std::size_t>(i);
    if (e[li].dim(2) != (h >> i) || e[li].dim(3) != (w >> i)) {
      throw PreconditionError("patch embedding: level " + std::to_string(i + 1) + " has shape " +
                              e[li].shape().str() + ", expected extents halving per level from " +
                              e[0].shape().str());
    }
    Var<T> x = convs_[li].forward(ctx, e[li]);
    if (position_[li] != nullptr) {
      Var<T> pe = ctx.use(*position_[li]);
      if (pe.dim(2) != x.dim(2) || pe.dim(3) != x.dim(3)) pe = resample_bilinear(pe, x.dim(2), x.dim(3));
      x = add_broadcast(x, pe);
    }
    out[li] = x;
  }
  return out;
}

template <typename T>
Index PatchEmbed<T>::flops(Index h, Index w) const {
  Index f = 0;
  for (int i = 0; i < kLevels; ++i) f += convs_[static_cast<std::size_t>(i)].spec().flops(h >> i, w >> i);
  return f;
}

template <typename T>
SSCA<T>::SSCA(Builder<T>& b, const std::string& name, const ModelConfig& cfg)
    : channels_(cfg.channels), total_(cfg.total_channels()), heads_(cfg.num_heads),
      temperature_(std::sqrt(static_cast<double>(cfg.total_channels()))) {
  auto pointwise = [](Index c) { return ConvSpec::square(c, c, 1, 1, 0, 1, false); };
  for (int i = 0; i < kLevels; ++i) {
    const auto li = static_cast<std::size_t>(i);
    const Index c = cfg.channels[li];
    q_pw_[li] = Conv2d<T>(b, level_name(name + ".query", i) + ".pw", pointwise(c));
    if (cfg.spatial_embedding) {
      q_dw_[li].emplace(b, level_name(name + ".query", i) + ".dw", ConvSpec::depthwise(c, 3));
    }
  }
  k_pw_ = Conv2d<T>(b, name + ".key.pw", pointwise(total_));
  v_pw_ = Conv2d<T>(b, name + ".value.pw", pointwise(total_));
  if (cfg.spatial_embedding) {
    k_dw_.emplace(b, name + ".key.dw", ConvSpec::depthwise(total_, 3));
    v_dw_.emplace(b, name + ".value.dw", ConvSpec::depthwise(total_, 3));
  }
  for (int i = 0; i < kLevels; ++i) {
    const auto li = static_cast<std::size_t>(i);
    proj_[li] = Conv2d<T>(b, level_name(name + ".proj", i), pointwise(cfg.channels[li]));
  }
}

template <typename T>
Var<T> SSCA<T>::embed(const Context<T>& ctx, const Conv2d<T>& pw, const std::optional<Conv2d<T>>& dw,
                      const Var<T>& x) const {
  Var<T> y = pw.forward(ctx, x);
  return dw ? dw->forward(ctx, y) : y;
}

template <typename T>
Levels<T> SSCA<T>::forward(const Context<T>& ctx, const Levels<T>& normed, const Var<T>& normed_all) const {
  const Shape& as = normed_all.shape();
  if (as.rank() != 4 || as[1] != total_) {
    throw ConfigError("ssca: concatenated input " + as.str() + " must have " + std::to_string(total_) +
                      " channels");
  }
  const Index batch = as[0], h = as[2], w = as[3], hw = h * w;
  const Index head_total = total_ / heads_;

  const Var<T> key = reshape(embed(ctx, k_pw_, k_dw_, normed_all), {batch * heads_, head_total, hw});
  const Var<T> value = reshape(embed(ctx, v_pw_, v_dw_, normed_all), {batch * heads_, head_total, hw});

  Levels<T> out;
  for (int i = 0; i < kLevels; ++i) {
    const auto li = static_cast<std::size_t>(i);
    const Index c = channels_[li];
    const Shape& s = normed[li].shape();
    if (s.rank() != 4 || s[0] != batch || s[1] != c || s[2] != h || s[3] != w) {
      throw ConfigError("ssca: level " + std::to_string(i + 1) + " input " + s.str() +
                        " does not match the concatenated input " + as.str());
    }
    const Index head_c = c / heads_;
    const Var<T> query = reshape(embed(ctx, q_pw_[li], q_dw_[li], normed[li]), {batch * heads_, head_c, hw});

    Var<T> logits = scale(matmul(query, key, false, true), 1.0 / temperature_);
    logits = reshape(logits, {batch, heads_, head_c, head_total});
    logits = reshape(instance_norm(logits), {batch * heads_, head_c, head_total});
    const Var<T> attn = softmax_lastdim(logits);
    if (ctx.attention_probe != nullptr) ctx.attention_probe->push_back(attn.value());

    const Var<T> mixed = reshape(matmul(attn, value), {batch, c, h, w});
    out[li] = proj_[li].forward(ctx, mixed);
  }
  return out;
}

template <typename T>
Index SSCA<T>::flops(Index h, Index w) const {
  Index f = k_pw_.spec().flops(h, w) + v_pw_.spec().flops(h, w);
  if (k_dw_) f += k_dw_->spec().flops(h, w) + v_dw_->spec().flops(h, w);
  for (std::size_t i = 0; i < kLevels; ++i) {
    f += q_pw_[i].spec().flops(h, w) + proj_[i].spec().flops(h, w);
    if (q_dw_[i]) f += q_dw_[i]->spec().flops(h, w);
    // Q K^T and A V, each (c / heads) x (total / heads) x hw per head.
    f += 2 * 2 * (channels_[i] / heads_) * (total_ / heads_) * h * w * heads_;
  }
  return f;
}

template <typename T>
CFN<T>::CFN(Builder<T>& b, const std::string& name, Index channels, const ModelConfig& cfg)
    : norm_(b, name + ".norm", channels), gate_sigmoid_(cfg.gate_sigmoid) {
  const Index e = cfg.expanded_channels(channels);
  expand_ = Conv2d<T>(b, name + ".expand", ConvSpec::square(channels, e, 1, 1, 0, 1, false));
  dw3_ = Conv2d<T>(b, name + ".dw3", ConvSpec::depthwise(e / 2, 3));
  dw5_ = Conv2d<T>(b, name + ".dw5", ConvSpec::depthwise(e / 2, 5));
  contract_ = Conv2d<T>(b, name + ".contract", ConvSpec::square(e, channels, 1, 1, 0, 1, false));
  if (cfg.gslc) gate_kernel_ = &b.uniform(name + ".gate", {3}, 1.0 / std::sqrt(3.0));
}

template <typename T>
Var<T> CFN<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  const Index e = expanded();
  const Var<T> expanded_x = expand_.forward(ctx, norm_.forward(ctx, x));
  const Var<T> a = gelu(dw3_.forward(ctx, slice_channels(expanded_x, 0, e / 2)));
  const Var<T> c = gelu(dw5_.forward(ctx, slice_channels(expanded_x, e / 2, e / 2)));
  Var<T> sc = contract_.forward(ctx, concat_channels<T>({a, c}));
  if (gate_kernel_ != nullptr) {
    Var<T> gate = conv1d_channel(global_avg_pool(sc), ctx.use(*gate_kernel_));
    if (gate_sigmoid_) gate = sigmoid(gate);
    sc = mul_channel(gate, sc);
  }
  return add(sc, x);
}

template <typename T>
Index CFN<T>::flops(Index h, Index w) const {
  Index f = expand_.spec().flops(h, w) + dw3_.spec().flops(h, w) + dw5_.spec().flops(h, w) +
            contract_.spec().flops(h, w);
  if (gate_kernel_ != nullptr) f += 2 * contract_.spec().out_channels * 3;
  return f;
}

template <typename T>
SCTBlock<T>::SCTBlock(Builder<T>& b, const std::string& name, const ModelConfig& cfg)
    : norm_all_(b, name + ".norm_all", cfg.total_channels()), ssca_(b, name + ".ssca", cfg) {
  for (int i = 0; i < kLevels; ++i) {
    const auto li = static_cast<std::size_t>(i);
    norms_[li] = LayerNorm2d<T>(b, level_name(name + ".norm", i), cfg.channels[li]);
    cfn_[li] = CFN<T>(b, level_name(name + ".cfn", i), cfg.channels[li], cfg);
  }
}

template <typename T>
Levels<T> SCTBlock<T>::forward(const Context<T>& ctx, const Levels<T>& in) const {
  for (int i = 1; i < kLevels; ++i) {
    const auto li = static_cast<std::size_t>(i);
    if (in[li].dim(0) != in[0].dim(0) || in[li].dim(2) != in[0].dim(2) || in[li].dim(3) != in[0].dim(3)) {
      throw ConfigError("sctb: level " + std::to_string(i + 1) + " shape " + in[li].shape().str() +
                        " does not match level 1 shape " + in[0].shape().str());
    }
  }
  Levels<T> normed;
  for (std::size_t i = 0; i < kLevels; ++i) normed[i] = norms_[i].forward(ctx, in[i]);
  const Var<T> normed_all = norm_all_.forward(ctx, concat_channels<T>({in[0], in[1], in[2], in[3]}));
  const Levels<T> attended = ssca_.forward(ctx, normed, normed_all);
  Levels<T> out;
  for (std::size_t i = 0; i < kLevels; ++i) out[i] = cfn_[i].forward(ctx, add(attended[i], in[i]));
  return out;
}

template <typename T>
Index SCTBlock<T>::flops(Index h, Index w) const {
  Index f = ssca_.flops(h, w);
  for (const auto& c : cfn_) f += c.flops(h, w);
  return f;
}

template <typename T>
FeatureMapper<T>::FeatureMapper(Builder<T>& b, const ModelConfig& cfg) {
  for (int i = 0; i < kLevels; ++i) {
    const auto li = static_cast<std::size_t>(i);
    const Index c = cfg.channels[li];
    maps_[li] = ConvBnRelu<T>(b, level_name("mapper.level", i), ConvSpec::square(c, c, 1));
  }
}

template <typename T>
Levels<T> FeatureMapper<T>::forward(const Context<T>& ctx, const Levels<T>& coarse,
                                    const Levels<T>& encoder_levels) const {
  Levels<T> out;
  for (std::size_t i = 0; i < kLevels; ++i) {
    const Var<T>& e = encoder_levels[i];
    const Var<T> up = resample_bilinear(coarse[i], e.dim(2), e.dim(3));
    out[i] = add(e, maps_[i].forward(ctx, up));
  }
  return out;
}

template <typename T>
Index FeatureMapper<T>::flops(Index h, Index w) const {
  Index f = 0;
  for (int i = 0; i < kLevels; ++i) f += maps_[static_cast<std::size_t>(i)].conv().spec().flops(h >> i, w >> i);
  return f;
}

template <typename T>
ChannelTransformer<T>::ChannelTransformer(Builder<T>& b, const ModelConfig& cfg)
    : embed_(b, cfg), patch_(cfg.patch_size) {
  for (Index k = 0; k < cfg.num_sctb; ++k) blocks_.emplace_back(b, "sctb" + std::to_string(k + 1), cfg);
  mapper_ = FeatureMapper<T>(b, cfg);
}

template <typename T>
Levels<T> ChannelTransformer<T>::forward(const Context<T>& ctx, const Levels<T>& encoder_levels) const {
  Levels<T> x = embed_.forward(ctx, encoder_levels);
  for (const auto& block : blocks_) x = block.forward(ctx, x);
  return mapper_.forward(ctx, x, encoder_levels);
}

template <typename T>
Index ChannelTransformer<T>::flops(Index h, Index w) const {
  Index f = embed_.flops(h, w) + mapper_.flops(h, w);
  for (const auto& block : blocks_) f += block.flops(h / patch_, w / patch_);
  return f;
}

template class PatchEmbed<float>;
template class PatchEmbed<double>;
template class SSCA<float>;
template class SSCA<double>;
template class CFN<float>;
template class CFN<double>;
template class SCTBlock<float>;
template class SCTBlock<double>;
template class FeatureMapper<float>;
template class FeatureMapper<double>;
template class ChannelTransformer<float>;
template class ChannelTransformer<double>;

}  // namespace sct
