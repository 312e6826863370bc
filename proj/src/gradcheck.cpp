#include "macow/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace macow {

template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T eps) {
  require(eps > T(0), ErrorCode::kValidation, "finite difference step must be positive");
  const T first = f(x);
  const T second = f(x);
  require(first == second, ErrorCode::kValidation, "function is not deterministic (repeated evaluation differs)");
  Tensor<T> grad(x.shape());
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T original = probe[i];
    probe[i] = original + eps;
    const T up = f(probe);
    probe[i] = original - eps;
    const T down = f(probe);
    probe[i] = original;
    grad[i] = (up - down) / (T(2) * eps);
  }
  return grad;
}

template <typename T>
T max_relative_error(const Tensor<T>& a, const Tensor<T>& b, T floor) {
  require(a.shape() == b.shape(), ErrorCode::kDimension, "relative error of differently shaped tensors");
  T worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

template Tensor<float> finite_diff_grad(const std::function<float(const Tensor<float>&)>&, const Tensor<float>&, float);
template Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>&, const Tensor<double>&,
                                         double);
template float max_relative_error(const Tensor<float>&, const Tensor<float>&, float);
template double max_relative_error(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace macow
