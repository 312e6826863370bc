#include "macow/linalg.hpp"

#include <cmath>
#include <utility>

#include "macow/error.hpp"

namespace macow::linalg {

template <typename T>
LuDecomposition<T>::LuDecomposition(std::vector<T> matrix, std::size_t n) : lu_(std::move(matrix)), pivot_(n), n_(n) {
  require(lu_.size() == n * n, ErrorCode::kDimension, "LU input is not square");
  for (std::size_t i = 0; i < n; ++i) pivot_[i] = i;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    T best = std::abs(lu_[k * n + k]);
    for (std::size_t r = k + 1; r < n; ++r) {
      if (std::abs(lu_[r * n + k]) > best) {
        best = std::abs(lu_[r * n + k]);
        p = r;
      }
    }
    if (p != k) {
      for (std::size_t c = 0; c < n; ++c) std::swap(lu_[k * n + c], lu_[p * n + c]);
      std::swap(pivot_[k], pivot_[p]);
      sign_ = -sign_;
    }
    const T diag = lu_[k * n + k];
    if (diag == T(0)) continue;
    for (std::size_t r = k + 1; r < n; ++r) {
      const T f = lu_[r * n + k] / diag;
      lu_[r * n + k] = f;
      for (std::size_t c = k + 1; c < n; ++c) lu_[r * n + c] -= f * lu_[k * n + c];
    }
  }
}

template <typename T>
bool LuDecomposition<T>::singular(T min_abs_det) const {
  T log_det = 0;
  for (std::size_t i = 0; i < n_; ++i) {
    const T d = std::abs(lu_[i * n_ + i]);
    if (d == T(0)) return true;
    log_det += std::log(d);
  }
  return log_det < std::log(min_abs_det);
}

template <typename T>
T LuDecomposition<T>::log_abs_det() const {
  require(!singular(static_cast<T>(kMinAbsDet)), ErrorCode::kInvertibility, "matrix is singular (|det| < 1e-12)");
  T log_det = 0;
  for (std::size_t i = 0; i < n_; ++i) log_det += std::log(std::abs(lu_[i * n_ + i]));
  return log_det;
}

template <typename T>
void LuDecomposition<T>::solve_in_place(std::vector<T>& rhs) const {
  require(rhs.size() == n_, ErrorCode::kDimension, "LU solve size mismatch");
  std::vector<T> x(n_);
  for (std::size_t i = 0; i < n_; ++i) x[i] = rhs[pivot_[i]];
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t k = 0; k < i; ++k) x[i] -= lu_[i * n_ + k] * x[k];
  for (std::size_t ii = n_; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n_; ++k) x[ii] -= lu_[ii * n_ + k] * x[k];
    x[ii] /= lu_[ii * n_ + ii];
  }
  rhs = std::move(x);
}

template <typename T>
std::vector<T> LuDecomposition<T>::inverse() const {
  require(!singular(static_cast<T>(kMinAbsDet)), ErrorCode::kInvertibility, "matrix is singular (|det| < 1e-12)");
  std::vector<T> inv(n_ * n_);
  std::vector<T> col(n_);
  for (std::size_t c = 0; c < n_; ++c) {
    std::fill(col.begin(), col.end(), T(0));
    col[c] = 1;
    solve_in_place(col);
    for (std::size_t r = 0; r < n_; ++r) inv[r * n_ + c] = col[r];
  }
  return inv;
}

template class LuDecomposition<float>;
template class LuDecomposition<double>;

}  // namespace macow::linalg
