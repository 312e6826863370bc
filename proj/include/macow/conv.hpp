#pragma once

#include <cstddef>
#include <optional>
#include <type_traits>

#include "macow/tensor.hpp"

namespace macow {

/// Kernel position aligned with the output pixel. Zero padding is implied, so
/// output(i, j) reads input(i + a - anchor.row, j + b - anchor.col).
struct Anchor {
  std::size_t row = 0;
  std::size_t col = 0;
  friend constexpr bool operator==(const Anchor&, const Anchor&) = default;
};

/// "Same" padding anchor for an arbitrary kernel.
constexpr Anchor centered_anchor(std::size_t kh, std::size_t kw) { return {(kh - 1) / 2, (kw - 1) / 2}; }

/// Output rows [row_begin, row_end) x cols [col_begin, col_end).
struct OutputWindow {
  std::size_t row_begin = 0;
  std::size_t row_end = 0;
  std::size_t col_begin = 0;
  std::size_t col_end = 0;
};

// Optional tensor arguments; non-deduced so nullptr binds without naming T.
template <typename T>
using InPtr = std::type_identity_t<const Tensor<T>*>;
template <typename T>
using OutPtr = std::type_identity_t<Tensor<T>*>;

/// Weights are [kh, kw, cin, cout]; bias is [1,1,1,cout] or empty; the mask,
/// when present, is a 0/1 tensor of shape [kh, kw, 1, 1]. Masked taps are
/// skipped entirely, so masked inputs have exactly zero influence.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, InPtr<T> bias, InPtr<T> mask,
                         Anchor anchor, std::optional<OutputWindow> window = std::nullopt);

/// Accumulates (+=) into whichever gradient outputs are non-null.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, InPtr<T> mask, Anchor anchor,
                     const Tensor<T>& grad_out, OutPtr<T> grad_x, OutPtr<T> grad_weight,
                     OutPtr<T> grad_bias);

template <typename T>
void validate_conv_args(const Tensor<T>& x, const Tensor<T>& weight, InPtr<T> bias, InPtr<T> mask,
                        Anchor anchor);

}  // namespace macow
