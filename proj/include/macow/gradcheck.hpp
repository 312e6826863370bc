#pragma once

#include <functional>

#include "macow/tensor.hpp"

namespace macow {

/// Central-difference gradient (f(x+eps e_i) - f(x-eps e_i)) / 2eps for every
/// coordinate of x. f is evaluated twice at x first; differing results raise
/// kValidation since the estimate would be meaningless for a stochastic f.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T eps = T(1e-5));

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
template <typename T>
T max_relative_error(const Tensor<T>& a, const Tensor<T>& b, T floor);

}  // namespace macow
