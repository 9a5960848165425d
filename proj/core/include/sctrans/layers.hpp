#pragma once

#include <random>
#include <string>
#include <vector>

#include "sctrans/autograd.hpp"
#include "sctrans/ops.hpp"
#include "sctrans/param_store.hpp"

namespace sct {

/// Per-call forward state: the tape to record on (null for inference), the
/// batchnorm mode, and an optional sink for attention matrices.
template <typename T>
struct Context {
  GradTape<T>* tape = nullptr;
  bool training = false;
  std::vector<Tensor<T>>* attention_probe = nullptr;

  [[nodiscard]] Var<T> use(Parameter<T>& p) const {
    if (tape != nullptr) return tape->watch(p);
    auto node = std::make_shared<Node<T>>();
    node->op = "param";
    node->external = &p.value;
    return Var<T>(std::move(node));
  }
};

/// Creates named, initialized parameters in a store. Convolution weights and biases are
/// drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); norm scales start at 1 and shifts at 0.
template <typename T>
class Builder {
 public:
  Builder(ParamStore<T>& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  Parameter<T>& uniform(const std::string& name, Shape shape, double bound);
  Parameter<T>& constant(const std::string& name, Shape shape, T value, bool trainable = true);
  [[nodiscard]] ParamStore<T>& store() { return store_; }

 private:
  ParamStore<T>& store_;
  std::mt19937_64 rng_;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(Builder<T>& b, const std::string& name, const ConvSpec& spec);

  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const;
  [[nodiscard]] const ConvSpec& spec() const { return spec_; }
  [[nodiscard]] Parameter<T>& weight() const { return *weight_; }
  [[nodiscard]] Parameter<T>* bias() const { return bias_; }

 private:
  ConvSpec spec_;
  Parameter<T>* weight_ = nullptr;
  Parameter<T>* bias_ = nullptr;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(Builder<T>& b, const std::string& name, Index channels);
  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const;
  [[nodiscard]] Parameter<T>& shift() const { return *beta_; }

  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

 private:
  Parameter<T>* gamma_ = nullptr;
  Parameter<T>* beta_ = nullptr;
  Parameter<T>* mean_ = nullptr;
  Parameter<T>* var_ = nullptr;
};

/// Layer norm over the channel axis at every spatial position.
template <typename T>
class LayerNorm2d {
 public:
  LayerNorm2d() = default;
  LayerNorm2d(Builder<T>& b, const std::string& name, Index channels);
  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const;
  [[nodiscard]] Parameter<T>& shift() const { return *beta_; }

 private:
  Parameter<T>* gamma_ = nullptr;
  Parameter<T>* beta_ = nullptr;
};

/// conv -> batchnorm -> ReLU.
template <typename T>
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(Builder<T>& b, const std::string& name, const ConvSpec& spec);
  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const;
  [[nodiscard]] const Conv2d<T>& conv() const { return conv_; }
  [[nodiscard]] const BatchNorm2d<T>& norm() const { return bn_; }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
};

}  // namespace sct
