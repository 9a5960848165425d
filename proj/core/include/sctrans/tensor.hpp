#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "sctrans/errors.hpp"

namespace sct {

using Index = std::int64_t;

/// Extents of a dense row-major array. Feature maps use rank 4 (b, c, h, w).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) {}
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {}

  [[nodiscard]] std::size_t rank() const { return dims_.size(); }
  [[nodiscard]] Index operator[](std::size_t i) const { return dims_[i]; }
  [[nodiscard]] Index numel() const {
    Index n = 1;
    for (Index d : dims_) n *= d;
    return n;
  }
  [[nodiscard]] const std::vector<Index>& dims() const { return dims_; }
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<Index> dims_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_.numel()), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<Index>(data_.size()) != shape_.numel()) {
      throw ConfigError("tensor data size " + std::to_string(data_.size()) +
                        " does not match shape " + shape_.str());
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] Index dim(std::size_t i) const { return shape_[i]; }
  [[nodiscard]] std::size_t rank() const { return shape_.rank(); }
  [[nodiscard]] Index numel() const { return static_cast<Index>(data_.size()); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] std::span<T> span() { return data_; }
  [[nodiscard]] std::span<const T> span() const { return data_; }
  [[nodiscard]] T* data() { return data_.data(); }
  [[nodiscard]] const T* data() const { return data_.data(); }
  [[nodiscard]] const std::vector<T>& values() const { return data_; }

  T& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  // Rank-4 element access.
  T& at(Index b, Index c, Index y, Index x) { return data_[offset(b, c, y, x)]; }
  const T& at(Index b, Index c, Index y, Index x) const { return data_[offset(b, c, y, x)]; }

  /// Same data, new extents; numel must match.
  [[nodiscard]] Tensor reshaped(Shape shape) const& {
    check_reshape(shape);
    return Tensor(std::move(shape), data_);
  }
  [[nodiscard]] Tensor reshaped(Shape shape) && {
    check_reshape(shape);
    shape_ = std::move(shape);
    return std::move(*this);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset(Index b, Index c, Index y, Index x) const {
    return static_cast<std::size_t>(((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x);
  }
  void check_reshape(const Shape& shape) const {
    if (shape.numel() != shape_.numel()) {
      throw ConfigError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
[[nodiscard]] bool all_finite(const Tensor<T>& t);

}  // namespace sct
