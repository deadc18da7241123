#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "voxattn/errors.hpp"

namespace voxattn {

// Dense N-dimensional real array. Layout is row-major with the last extent
// fastest; network tensors use the order (N, C, D, H, W).
template <typename T>
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<std::size_t>(numel_from_shape()), T(0));
  }

  Tensor(std::vector<std::int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (static_cast<std::int64_t>(data_.size()) != numel_from_shape()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string());
    }
  }

  static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::int64_t> shape, T value) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }

  std::int64_t extent(std::int64_t axis) const { return shape_[static_cast<std::size_t>(axis)]; }

  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool v) {
    requires_grad_ = v;
    return *this;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Reinterprets the buffer under a new shape with the same element count.
  Tensor reshaped(std::vector<std::int64_t> new_shape) const {
    Tensor out(std::move(new_shape), data_);
    out.requires_grad_ = requires_grad_;
    return out;
  }

  bool all_finite() const;

  std::string shape_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

  // Casts elementwise; used to rerun graphs in 64-bit for gradient checking.
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    Tensor<U> t(shape_, std::move(out));
    t.set_requires_grad(requires_grad_);
    return t;
  }

private:
  std::int64_t numel_from_shape() const {
    std::int64_t n = 1;
    for (auto e : shape_) n *= e;
    return n;
  }

  void validate_shape() const {
    if (shape_.empty()) throw DimensionError("tensor shape must have at least one extent");
    for (auto e : shape_) {
      if (e < 1) throw DimensionError("tensor extents must all be >= 1, got " + shape_string());
    }
  }

  std::vector<std::int64_t> shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
};

// Convenience accessors for the canonical 5-D (N,C,D,H,W) layout.
struct Dims5 {
  std::int64_t n, c, d, h, w;
};

template <typename T>
inline Dims5 dims5(const Tensor<T>& t) {
  if (t.rank() != 5) {
    throw DimensionError("expected a rank-5 (N,C,D,H,W) tensor, got shape " + t.shape_string());
  }
  return {t.extent(0), t.extent(1), t.extent(2), t.extent(3), t.extent(4)};
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace voxattn
