#include "sctrans/autograd.hpp"

namespace sct {

template <typename T>
Var<T> GradTape<T>::watch(Parameter<T>& param) {
  auto node = std::make_shared<Node<T>>();
  node->op = "param";
  node->external = &param.value;
  node->requires_grad = param.trainable;
  node->tape = this;
  node->param = param.trainable ? &param : nullptr;
  if (param.trainable) nodes_.push_back(node);
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> GradTape<T>::leaf(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->owned = std::move(value);
  node->requires_grad = true;
  node->tape = this;
  nodes_.push_back(node);
  return Var<T>(std::move(node));
}

template <typename T>
void GradTape<T>::backward(const Var<T>& loss) {
  if (nodes_.empty()) throw UsageError("backward called on a tape with no recorded forward pass");
  if (consumed_) throw UsageError("backward called twice on the same tape");
  if (!loss.valid() || loss.tape() != this || !loss.requires_grad()) {
    throw UsageError("backward requires a loss produced by ops recorded on this tape");
  }
  if (loss.value().numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + loss.shape().str());
  }
  consumed_ = true;
  loss.node()->grad_buffer()[0] = T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>& node = **it;
    if (node.backward && !node.grad.empty()) node.backward(node);
    node.backward = nullptr;
  }
  for (auto& node : nodes_) {
    if (node->param == nullptr) continue;
    Parameter<T>& p = *node->param;
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor<T>(p.value.shape());
    if (node->grad.empty()) continue;
    T* g = p.grad.data();
    const T* src = node->grad.data();
    for (Index i = 0; i < p.grad.numel(); ++i) g[i] += src[i];
  }
}

template <typename T>
std::string GradTape<T>::first_non_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& node = nodes_[i];
    if (!all_finite(node->value())) {
      std::string what = node->param ? "parameter '" + node->param->name + "'"
                                     : std::string("op '") + node->op + "'";
      return what + " (tape node " + std::to_string(i) + ", shape " +
             node->value().shape().str() + ")";
    }
  }
  return {};
}

template class GradTape<float>;
template class GradTape<double>;

}  // namespace sct
