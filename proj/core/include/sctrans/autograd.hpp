#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sctrans/param_store.hpp"
#include "sctrans/tensor.hpp"

namespace sct {

template <typename T>
class GradTape;

template <typename T>
struct Node {
  const char* op = "leaf";
  Tensor<T> owned;
  const Tensor<T>* external = nullptr;  // parameter leaves alias the store
  Tensor<T> grad;                       // empty until something flows back
  bool requires_grad = false;
  GradTape<T>* tape = nullptr;
  Parameter<T>* param = nullptr;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  [[nodiscard]] const Tensor<T>& value() const { return external ? *external : owned; }
  /// Gradient buffer, zero-allocated on first access.
  Tensor<T>& grad_buffer() {
    if (grad.empty() && value().numel() > 0) grad = Tensor<T>(value().shape());
    return grad;
  }
};

/// Handle to a value in the computation graph. Values created outside a tape are
/// constants; values derived from tape-watched inputs are recorded for backward.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->owned = std::move(value);
    return Var(std::move(node));
  }

  [[nodiscard]] const Tensor<T>& value() const { return node_->value(); }
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] Index dim(std::size_t i) const { return value().dim(i); }
  [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
  [[nodiscard]] GradTape<T>* tape() const { return node_ ? node_->tape : nullptr; }
  /// Gradient after backward; empty tensor if nothing reached this value.
  [[nodiscard]] const Tensor<T>& grad() const { return node_->grad; }
  [[nodiscard]] const std::shared_ptr<Node<T>>& node() const { return node_; }
  [[nodiscard]] bool valid() const { return node_ != nullptr; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Records differentiable ops in execution order for one training step.
/// Single-threaded; never share a tape between threads.
template <typename T>
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// Leaf aliasing a parameter; its gradient is accumulated into `param.grad` by backward.
  Var<T> watch(Parameter<T>& param);
  /// Leaf owning a copy of `value` whose gradient can be read back via Var::grad().
  Var<T> leaf(Tensor<T> value);

  /// Reverse-mode sweep from a scalar loss. Every trainable parameter registered through
  /// `watch` ends with a gradient of matching shape (zeros if unreachable).
  void backward(const Var<T>& loss);

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] const std::vector<std::shared_ptr<Node<T>>>& nodes() const { return nodes_; }

  /// Name of the first recorded op whose output holds a non-finite value, or empty.
  [[nodiscard]] std::string first_non_finite() const;

  // Used by op implementations.
  void record(std::shared_ptr<Node<T>> node) { nodes_.push_back(std::move(node)); }

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  bool consumed_ = false;
};

/// Builds an op result node. Records `fn` only when some input is being tracked.
template <typename T>
Var<T> make_result(const char* op, Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->owned = std::move(value);
  GradTape<T>* tape = nullptr;
  for (const auto& in : inputs) {
    if (in.requires_grad()) {
      tape = in.tape();
      break;
    }
  }
  if (tape != nullptr) {
    node->requires_grad = true;
    node->tape = tape;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(fn);
    tape->record(node);
  }
  return Var<T>(std::move(node));
}

}  // namespace sct
