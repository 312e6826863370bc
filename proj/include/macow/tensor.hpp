#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "macow/error.hpp"

namespace macow {

/// Extents of a rank-4 tensor laid out as [batch, height, width, channels].
struct Shape {
  std::array<std::size_t, 4> dims{0, 0, 0, 0};

  constexpr Shape() = default;
  constexpr Shape(std::size_t n, std::size_t h, std::size_t w, std::size_t c) : dims{n, h, w, c} {}

  constexpr std::size_t n() const { return dims[0]; }
  constexpr std::size_t h() const { return dims[1]; }
  constexpr std::size_t w() const { return dims[2]; }
  constexpr std::size_t c() const { return dims[3]; }
  constexpr std::size_t operator[](std::size_t axis) const { return dims[axis]; }
  constexpr std::size_t size() const { return dims[0] * dims[1] * dims[2] * dims[3]; }
  /// Elements per batch entry.
  constexpr std::size_t per_item() const { return dims[1] * dims[2] * dims[3]; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

/// Dense row-major tensor of 32- or 64-bit floats.
///
/// Pure value type; gradient bookkeeping lives in ad::Var.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T value) { return Tensor(Shape{1, 1, 1, 1}, value); }
  /// Per-channel vector embedded as [1,1,1,c].
  static Tensor channel_vector(std::span<const T> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t i, std::size_t j, std::size_t k) const {
    return ((n * shape_.h() + i) * shape_.w() + j) * shape_.c() + k;
  }
  T& at(std::size_t n, std::size_t i, std::size_t j, std::size_t k) { return data_[offset(n, i, j, k)]; }
  const T& at(std::size_t n, std::size_t i, std::size_t j, std::size_t k) const {
    return data_[offset(n, i, j, k)];
  }

  /// Value of a [1,1,1,1] tensor.
  T item() const;

  void fill(T value);
  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

template <typename T>
bool all_finite(const Tensor<T>& t);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

/// Channels [begin, end) of x.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Each 2x2 spatial block becomes 4c channels ordered top-left, top-right,
/// bottom-left, bottom-right; channel k of block position q lands at q*c + k.
template <typename T>
Tensor<T> squeeze2x2(const Tensor<T>& x);

template <typename T>
Tensor<T> unsqueeze2x2(const Tensor<T>& x);

/// Batch items [begin, end).
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& parts);

}  // namespace macow
