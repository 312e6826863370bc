#include "macow/conv.hpp"

#include <cstdint>

#include <fmt/format.h>

namespace macow {

template <typename T>
void validate_conv_args(const Tensor<T>& x, const Tensor<T>& weight, InPtr<T> bias, InPtr<T> mask,
                        Anchor anchor) {
  const Shape& ws = weight.shape();
  require(ws[0] >= 1 && ws[1] >= 1, ErrorCode::kDimension, "empty convolution kernel");
  require(ws[2] == x.shape().c(), ErrorCode::kDimension,
          fmt::format("conv2d input has {} channels, kernel expects {}", x.shape().c(), ws[2]));
  require(anchor.row < ws[0] && anchor.col < ws[1], ErrorCode::kValidation, "conv2d anchor outside kernel");
  if (bias != nullptr && !bias->empty()) {
    require(bias->shape() == Shape(1, 1, 1, ws[3]), ErrorCode::kDimension,
            "conv2d bias must be [1,1,1,cout], got " + to_string(bias->shape()));
  }
  if (mask != nullptr) {
    require(mask->shape() == Shape(ws[0], ws[1], 1, 1), ErrorCode::kDimension,
            "conv2d mask must be [kh,kw,1,1], got " + to_string(mask->shape()));
    for (T m : mask->data())
      require(m == T(0) || m == T(1), ErrorCode::kValidation, "conv2d mask is not binary");
  }
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, InPtr<T> bias, InPtr<T> mask,
                         Anchor anchor, std::optional<OutputWindow> window) {
  validate_conv_args(x, weight, bias, mask, anchor);
  const Shape& xs = x.shape();
  const std::size_t kh = weight.shape()[0];
  const std::size_t kw = weight.shape()[1];
  const std::size_t cin = weight.shape()[2];
  const std::size_t cout = weight.shape()[3];
  const OutputWindow win = window.value_or(OutputWindow{0, xs.h(), 0, xs.w()});
  require(win.row_begin <= win.row_end && win.row_end <= xs.h() && win.col_begin <= win.col_end &&
              win.col_end <= xs.w(),
          ErrorCode::kDimension, "conv2d output window outside input");
  const std::size_t oh = win.row_end - win.row_begin;
  const std::size_t ow = win.col_end - win.col_begin;
  Tensor<T> out(Shape{xs.n(), oh, ow, cout});
  const bool has_bias = bias != nullptr && !bias->empty();
  const auto H = static_cast<std::ptrdiff_t>(xs.h());
  const auto W = static_cast<std::ptrdiff_t>(xs.w());

  for (std::size_t n = 0; n < xs.n(); ++n) {
    for (std::size_t oi = 0; oi < oh; ++oi) {
      for (std::size_t oj = 0; oj < ow; ++oj) {
        T* o = &out.at(n, oi, oj, 0);
        if (has_bias)
          for (std::size_t co = 0; co < cout; ++co) o[co] = (*bias)[co];
        const auto i = static_cast<std::ptrdiff_t>(win.row_begin + oi);
        const auto j = static_cast<std::ptrdiff_t>(win.col_begin + oj);
        for (std::size_t a = 0; a < kh; ++a) {
          const std::ptrdiff_t xi = i + static_cast<std::ptrdiff_t>(a) - static_cast<std::ptrdiff_t>(anchor.row);
          if (xi < 0 || xi >= H) continue;
          for (std::size_t b = 0; b < kw; ++b) {
            if (mask != nullptr && (*mask)[a * kw + b] == T(0)) continue;
            const std::ptrdiff_t xj = j + static_cast<std::ptrdiff_t>(b) - static_cast<std::ptrdiff_t>(anchor.col);
            if (xj < 0 || xj >= W) continue;
            const T* xp = &x.at(n, static_cast<std::size_t>(xi), static_cast<std::size_t>(xj), 0);
            const T* wp = &weight[(a * kw + b) * cin * cout];
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T xv = xp[ci];
              const T* wrow = wp + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) o[co] += xv * wrow[co];
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, InPtr<T> mask, Anchor anchor,
                     const Tensor<T>& grad_out, OutPtr<T> grad_x, OutPtr<T> grad_weight,
                     OutPtr<T> grad_bias) {
  const Shape& xs = x.shape();
  const std::size_t kh = weight.shape()[0];
  const std::size_t kw = weight.shape()[1];
  const std::size_t cin = weight.shape()[2];
  const std::size_t cout = weight.shape()[3];
  require(grad_out.shape() == Shape(xs.n(), xs.h(), xs.w(), cout), ErrorCode::kDimension,
          "conv2d backward gradient shape mismatch");
  const auto H = static_cast<std::ptrdiff_t>(xs.h());
  const auto W = static_cast<std::ptrdiff_t>(xs.w());

  if (grad_bias != nullptr) {
    const std::size_t rows = xs.n() * xs.h() * xs.w();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t co = 0; co < cout; ++co) (*grad_bias)[co] += grad_out[r * cout + co];
  }
  if (grad_x == nullptr && grad_weight == nullptr) return;

  for (std::size_t n = 0; n < xs.n(); ++n) {
    for (std::size_t i = 0; i < xs.h(); ++i) {
      for (std::size_t j = 0; j < xs.w(); ++j) {
        const T* g = &grad_out.at(n, i, j, 0);
        for (std::size_t a = 0; a < kh; ++a) {
          const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(i + a) - static_cast<std::ptrdiff_t>(anchor.row);
          if (xi < 0 || xi >= H) continue;
          for (std::size_t b = 0; b < kw; ++b) {
            if (mask != nullptr && (*mask)[a * kw + b] == T(0)) continue;
            const std::ptrdiff_t xj = static_cast<std::ptrdiff_t>(j + b) - static_cast<std::ptrdiff_t>(anchor.col);
            if (xj < 0 || xj >= W) continue;
            const std::size_t xoff = x.offset(n, static_cast<std::size_t>(xi), static_cast<std::size_t>(xj), 0);
            const std::size_t woff = (a * kw + b) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T* wrow = &weight[woff + ci * cout];
              if (grad_x != nullptr) {
                T acc = 0;
                for (std::size_t co = 0; co < cout; ++co) acc += wrow[co] * g[co];
                (*grad_x)[xoff + ci] += acc;
              }
              if (grad_weight != nullptr) {
                const T xv = x[xoff + ci];
                T* gw = &(*grad_weight)[woff + ci * cout];
                for (std::size_t co = 0; co < cout; ++co) gw[co] += xv * g[co];
              }
            }
          }
        }
      }
    }
  }
}

#define MACOW_INSTANTIATE(T)                                                                                     \
  template void validate_conv_args(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, const Tensor<T>*,       \
                                   Anchor);                                                                      \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, const Tensor<T>*,      \
                                    Anchor, std::optional<OutputWindow>);                                        \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, Anchor, const Tensor<T>&, \
                                Tensor<T>*, Tensor<T>*, Tensor<T>*);

MACOW_INSTANTIATE(float)
MACOW_INSTANTIATE(double)

}  // namespace macow
