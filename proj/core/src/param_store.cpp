#include "sctrans/param_store.hpp"

namespace sct {

template <typename T>
Parameter<T>& ParamStore<T>::add(const std::string& name, Tensor<T> value, bool trainable) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  auto& p = entries_.emplace_back();
  p.name = name;
  p.value = std::move(value);
  p.trainable = trainable;
  return p;
}

template <typename T>
Parameter<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

template <typename T>
const Parameter<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

template <typename T>
Index ParamStore<T>::count_trainable() const {
  Index n = 0;
  for (const auto& p : entries_) {
    if (p.trainable) n += p.value.numel();
  }
  return n;
}

template <typename T>
Index ParamStore<T>::count_trainable(const std::string& prefix) const {
  Index n = 0;
  for (const auto& p : entries_) {
    if (p.trainable && p.name.starts_with(prefix)) n += p.value.numel();
  }
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : entries_) {
    if (!p.trainable) continue;
    if (p.grad.shape() != p.value.shape()) {
      p.grad = Tensor<T>(p.value.shape());
    } else {
      p.grad.fill(T(0));
    }
  }
}

template <typename T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& p : entries_) out.push_back(p.name);
  return out;
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace sct
