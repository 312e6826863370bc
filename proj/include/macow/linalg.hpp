#pragma once

#include <cstddef>
#include <vector>

namespace macow::linalg {

/// LU factorization with partial pivoting of a dense row-major n x n matrix.
template <typename T>
class LuDecomposition {
 public:
  LuDecomposition(std::vector<T> matrix, std::size_t n);

  std::size_t dim() const { return n_; }
  /// log|det A|. Throws kInvertibility when |det A| underflows the guard.
  T log_abs_det() const;
  T det_sign() const { return sign_; }
  bool singular(T min_abs_det) const;
  /// Row-major A^{-1}.
  std::vector<T> inverse() const;
  void solve_in_place(std::vector<T>& rhs) const;

 private:
  std::vector<T> lu_;
  std::vector<std::size_t> pivot_;
  std::size_t n_;
  T sign_ = 1;
};

/// |det W| below this is treated as singular for invertible 1x1 convolutions.
inline constexpr double kMinAbsDet = 1e-12;

}  // namespace macow::linalg
