#pragma once

#include <deque>
#include <map>
#include <string>
#include <vector>

#include "sctrans/tensor.hpp"

namespace sct {

/// A named tensor owned by a ParamStore. Buffers (e.g. batchnorm running statistics)
/// are stored alongside learnable parameters but are not optimized or counted.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
  // Adam moments, allocated by the optimizer on first use.
  Tensor<T> moment1;
  Tensor<T> moment2;
};

/// Ordered registry of every tensor a model owns. Names are hierarchical dot paths
/// and unique; insertion order is stable and defines checkpoint and init order.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter<T>& add(const std::string& name, Tensor<T> value, bool trainable = true);

  [[nodiscard]] Parameter<T>& get(const std::string& name);
  [[nodiscard]] const Parameter<T>& get(const std::string& name) const;
  [[nodiscard]] bool contains(const std::string& name) const { return index_.contains(name); }

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] auto begin() { return entries_.begin(); }
  [[nodiscard]] auto end() { return entries_.end(); }
  [[nodiscard]] auto begin() const { return entries_.begin(); }
  [[nodiscard]] auto end() const { return entries_.end(); }

  /// Number of learnable scalars (buffers excluded).
  [[nodiscard]] Index count_trainable() const;
  /// Learnable scalars whose names start with `prefix`.
  [[nodiscard]] Index count_trainable(const std::string& prefix) const;

  void zero_grad();
  [[nodiscard]] std::vector<std::string> names() const;

 private:
  std::deque<Parameter<T>> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace sct
