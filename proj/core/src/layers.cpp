#include "sctrans/layers.hpp"

#include <cmath>

namespace sct {

template <typename T>
Parameter<T>& Builder<T>::uniform(const std::string& name, Shape shape, double bound) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& v : t.span()) v = static_cast<T>(dist(rng_));
  return store_.add(name, std::move(t));
}

template <typename T>
Parameter<T>& Builder<T>::constant(const std::string& name, Shape shape, T value, bool trainable) {
  return store_.add(name, Tensor<T>(std::move(shape), value), trainable);
}

template <typename T>
Conv2d<T>::Conv2d(Builder<T>& b, const std::string& name, const ConvSpec& spec) : spec_(spec) {
  spec_.validate();
  const Index fan_in = (spec.in_channels / spec.groups) * spec.kernel_h * spec.kernel_w;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  weight_ = &b.uniform(name + ".weight", spec.weight_shape(), bound);
  if (spec.has_bias) bias_ = &b.uniform(name + ".bias", {spec.out_channels}, bound);
}

template <typename T>
Var<T> Conv2d<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  return conv2d(x, spec_, ctx.use(*weight_), bias_ ? ctx.use(*bias_) : Var<T>{});
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(Builder<T>& b, const std::string& name, Index channels) {
  gamma_ = &b.constant(name + ".weight", {channels}, T(1));
  beta_ = &b.constant(name + ".bias", {channels}, T(0));
  mean_ = &b.constant(name + ".running_mean", {channels}, T(0), false);
  var_ = &b.constant(name + ".running_var", {channels}, T(1), false);
}

template <typename T>
Var<T> BatchNorm2d<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  return batch_norm(x, ctx.use(*gamma_), ctx.use(*beta_), mean_->value, var_->value, ctx.training, kMomentum,
                    kEps);
}

template <typename T>
LayerNorm2d<T>::LayerNorm2d(Builder<T>& b, const std::string& name, Index channels) {
  gamma_ = &b.constant(name + ".weight", {channels}, T(1));
  beta_ = &b.constant(name + ".bias", {channels}, T(0));
}

template <typename T>
Var<T> LayerNorm2d<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  return layer_norm(x, ctx.use(*gamma_), ctx.use(*beta_));
}

template <typename T>
ConvBnRelu<T>::ConvBnRelu(Builder<T>& b, const std::string& name, const ConvSpec& spec)
    : conv_(b, name + ".conv", spec), bn_(b, name + ".bn", spec.out_channels) {}

template <typename T>
Var<T> ConvBnRelu<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  return relu(bn_.forward(ctx, conv_.forward(ctx, x)));
}

template class Builder<float>;
template class Builder<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class LayerNorm2d<float>;
template class LayerNorm2d<double>;
template class ConvBnRelu<float>;
template class ConvBnRelu<double>;

}  // namespace sct
