#include "macow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include <fmt/format.h>

namespace macow {

std::string to_string(const Shape& shape) {
  return fmt::format("[{},{},{},{}]", shape.n(), shape.h(), shape.w(), shape.c());
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  require(data_.size() == shape_.size(), ErrorCode::kDimension,
          fmt::format("buffer of {} elements does not match shape {}", data_.size(), to_string(shape_)));
}

template <typename T>
Tensor<T> Tensor<T>::channel_vector(std::span<const T> values) {
  return Tensor(Shape{1, 1, 1, values.size()}, std::vector<T>(values.begin(), values.end()));
}

template <typename T>
T Tensor<T>::item() const {
  require(data_.size() == 1, ErrorCode::kDimension, "item() on non-scalar tensor " + to_string(shape_));
  return data_[0];
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  require(shape.size() == shape_.size(), ErrorCode::kDimension,
          "cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(shape, data_);
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), ErrorCode::kDimension,
          "max_abs_diff shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  require(begin <= end && end <= s.c(), ErrorCode::kDimension,
          fmt::format("channel slice [{},{}) out of range for {}", begin, end, to_string(s)));
  const std::size_t width = end - begin;
  Tensor<T> out(Shape{s.n(), s.h(), s.w(), width});
  const std::size_t rows = s.n() * s.h() * s.w();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(r * s.c() + begin), width,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sa.n() == sb.n() && sa.h() == sb.h() && sa.w() == sb.w(), ErrorCode::kDimension,
          "concat_channels mismatch " + to_string(sa) + " vs " + to_string(sb));
  const std::size_t c = sa.c() + sb.c();
  Tensor<T> out(Shape{sa.n(), sa.h(), sa.w(), c});
  const std::size_t rows = sa.n() * sa.h() * sa.w();
  for (std::size_t r = 0; r < rows; ++r) {
    auto dst = out.data().begin() + static_cast<std::ptrdiff_t>(r * c);
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(r * sa.c()), sa.c(), dst);
    std::copy_n(b.data().begin() + static_cast<std::ptrdiff_t>(r * sb.c()), sb.c(),
                dst + static_cast<std::ptrdiff_t>(sa.c()));
  }
  return out;
}

template <typename T>
Tensor<T> squeeze2x2(const Tensor<T>& x) {
  const Shape& s = x.shape();
  require(s.h() % 2 == 0 && s.w() % 2 == 0, ErrorCode::kDimension,
          "squeeze needs even spatial extents, got " + to_string(s));
  const std::size_t c = s.c();
  Tensor<T> out(Shape{s.n(), s.h() / 2, s.w() / 2, 4 * c});
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t i = 0; i < s.h(); ++i)
      for (std::size_t j = 0; j < s.w(); ++j) {
        const std::size_t q = (i % 2) * 2 + (j % 2);
        for (std::size_t k = 0; k < c; ++k) out.at(n, i / 2, j / 2, q * c + k) = x.at(n, i, j, k);
      }
  return out;
}

template <typename T>
Tensor<T> unsqueeze2x2(const Tensor<T>& x) {
  const Shape& s = x.shape();
  require(s.c() % 4 == 0, ErrorCode::kDimension, "unsqueeze needs channels divisible by 4, got " + to_string(s));
  const std::size_t c = s.c() / 4;
  Tensor<T> out(Shape{s.n(), s.h() * 2, s.w() * 2, c});
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t i = 0; i < out.shape().h(); ++i)
      for (std::size_t j = 0; j < out.shape().w(); ++j) {
        const std::size_t q = (i % 2) * 2 + (j % 2);
        for (std::size_t k = 0; k < c; ++k) out.at(n, i, j, k) = x.at(n, i / 2, j / 2, q * c + k);
      }
  return out;
}

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  require(begin <= end && end <= s.n(), ErrorCode::kDimension, "batch slice out of range");
  const std::size_t item = s.per_item();
  std::vector<T> data(x.data().begin() + static_cast<std::ptrdiff_t>(begin * item),
                      x.data().begin() + static_cast<std::ptrdiff_t>(end * item));
  return Tensor<T>(Shape{end - begin, s.h(), s.w(), s.c()}, std::move(data));
}

template <typename T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), ErrorCode::kDimension, "concat_batch of nothing");
  Shape s = parts.front().shape();
  std::size_t n = 0;
  std::vector<T> data;
  for (const auto& p : parts) {
    require(p.shape().per_item() == s.per_item() && p.shape().h() == s.h() && p.shape().c() == s.c(),
            ErrorCode::kDimension, "concat_batch shape mismatch");
    n += p.shape().n();
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  return Tensor<T>(Shape{n, s.h(), s.w(), s.c()}, std::move(data));
}

#define MACOW_INSTANTIATE(T)                                                          \
  template class Tensor<T>;                                                           \
  template bool all_finite(const Tensor<T>&);                                         \
  template T max_abs_diff(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> slice_channels(const Tensor<T>&, std::size_t, std::size_t);      \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> squeeze2x2(const Tensor<T>&);                                    \
  template Tensor<T> unsqueeze2x2(const Tensor<T>&);                                  \
  template Tensor<T> slice_batch(const Tensor<T>&, std::size_t, std::size_t);         \
  template Tensor<T> concat_batch(const std::vector<Tensor<T>>&);

MACOW_INSTANTIATE(float)
MACOW_INSTANTIATE(double)

template class Tensor<std::uint8_t>;
template Tensor<std::uint8_t> slice_batch(const Tensor<std::uint8_t>&, std::size_t, std::size_t);
template Tensor<std::uint8_t> concat_batch(const std::vector<Tensor<std::uint8_t>>&);

}  // namespace macow
