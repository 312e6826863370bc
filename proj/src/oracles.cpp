#include "macow/oracles.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace macow::oracle {

std::vector<double> dense_jacobian(const VectorMap& f, const std::vector<double>& x, double eps) {
  const std::size_t d = x.size();
  std::vector<double> jac(d * d, 0.0);
  std::vector<double> probe = x;
  for (std::size_t j = 0; j < d; ++j) {
    probe[j] = x[j] + eps;
    const auto up = f(probe);
    probe[j] = x[j] - eps;
    const auto down = f(probe);
    probe[j] = x[j];
    require(up.size() == d && down.size() == d, ErrorCode::kDimension, "Jacobian oracle needs a square map");
    for (std::size_t i = 0; i < d; ++i) jac[i * d + j] = (up[i] - down[i]) / (2.0 * eps);
  }
  return jac;
}

double brute_force_logdet(const VectorMap& f, const std::vector<double>& x, double eps) {
  const std::size_t d = x.size();
  require(d >= 1 && d <= 64, ErrorCode::kValidation, fmt::format("dense Jacobian oracle limited to d <= 64, got {}", d));
  auto a = dense_jacobian(f, x, eps);
  // Gaussian elimination with partial pivoting, accumulating log|pivot|.
  double log_abs = 0.0;
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t best = col;
    for (std::size_t r = col + 1; r < d; ++r)
      if (std::abs(a[r * d + col]) > std::abs(a[best * d + col])) best = r;
    const double pivot = a[best * d + col];
    if (pivot == 0.0) fail(ErrorCode::kInvertibility, "Jacobian is numerically singular");
    if (best != col)
      for (std::size_t k = 0; k < d; ++k) std::swap(a[best * d + k], a[col * d + k]);
    log_abs += std::log(std::abs(pivot));
    for (std::size_t r = col + 1; r < d; ++r) {
      const double factor = a[r * d + col] / pivot;
      if (factor == 0.0) continue;
      for (std::size_t k = col; k < d; ++k) a[r * d + k] -= factor * a[col * d + k];
    }
  }
  require(log_abs >= std::log(1e-300), ErrorCode::kInvertibility, "Jacobian is numerically singular");
  return log_abs;
}

VectorMap layer_map(FlowLayer<double>& layer, const Shape& shape, const Tensor<double>* context) {
  require(shape.n() == 1, ErrorCode::kDimension, "layer_map works on a single item");
  return [&layer, shape, context](const std::vector<double>& v) {
    ad::Tape<double> tape(ad::Recording::kOff);
    ad::Var<double> ctx;
    if (context != nullptr) ctx = ad::constant(*context);
    auto r = layer.forward(tape, ad::constant(Tensor<double>(shape, v)), context != nullptr ? &ctx : nullptr);
    return r.y.value().storage();
  };
}

namespace {

struct Reach {
  std::ptrdiff_t row_lo, row_hi, col_lo, col_hi;  // inclusive offsets u - t
};

// Offsets readable from t. For the vertical kernel kh x kw: top reads the
// kh-1 rows above, bottom the kh-1 rows below; left/right are the transposes.
Reach reach_of(const MaskSpec& spec) {
  const auto kh = static_cast<std::ptrdiff_t>(spec.kh);
  const auto kw = static_cast<std::ptrdiff_t>(spec.kw);
  switch (spec.orientation) {
    case Orientation::kTop: return {-(kh - 1), -1, -(kw / 2), kw - 1 - kw / 2};
    case Orientation::kBottom: return {1, kh - 1, -(kw - 1 - kw / 2), kw / 2};
    case Orientation::kLeft: return {-(kh / 2), kh - 1 - kh / 2, -(kw - 1), -1};
    case Orientation::kRight: return {-(kh - 1 - kh / 2), kh / 2, 1, kw - 1};
  }
  return {0, -1, 0, -1};
}

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

std::vector<bool> declared_receptive_field(const MaskSpec& spec, std::size_t h, std::size_t w) {
  const Reach r = reach_of(spec);
  const std::size_t hw = h * w;
  std::vector<bool> visible(hw * hw, false);
  for (std::size_t t = 0; t < hw; ++t) {
    const auto ti = static_cast<std::ptrdiff_t>(t / w);
    const auto tj = static_cast<std::ptrdiff_t>(t % w);
    for (std::size_t u = 0; u < hw; ++u) {
      const auto di = static_cast<std::ptrdiff_t>(u / w) - ti;
      const auto dj = static_cast<std::ptrdiff_t>(u % w) - tj;
      visible[t * hw + u] = di >= r.row_lo && di <= r.row_hi && dj >= r.col_lo && dj <= r.col_hi;
    }
  }
  return visible;
}

std::vector<std::size_t> autoregressive_order(Orientation o, std::size_t h, std::size_t w) {
  std::vector<std::size_t> order;
  order.reserve(h * w);
  switch (o) {
    case Orientation::kTop:
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) order.push_back(i * w + j);
      break;
    case Orientation::kBottom:
      for (std::size_t i = h; i-- > 0;)
        for (std::size_t j = 0; j < w; ++j) order.push_back(i * w + j);
      break;
    case Orientation::kLeft:
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t i = 0; i < h; ++i) order.push_back(i * w + j);
      break;
    case Orientation::kRight:
      for (std::size_t j = w; j-- > 0;)
        for (std::size_t i = 0; i < h; ++i) order.push_back(i * w + j);
      break;
  }
  return order;
}

Tensor<double> sequential_inversion(const Tensor<double>& y, const MaskedConvFlow<double>& layer,
                                    std::size_t* applications) {
  const MaskSpec& spec = layer.spec();
  const Shape& s = y.shape();
  const std::size_t h = s.h(), w = s.w(), c = s.c();
  const Tensor<double>& ws = layer.scale_net().weight.value();
  const Tensor<double>& bs = layer.scale_net().bias.value();
  const Tensor<double>& wb = layer.shift_net().weight.value();
  const Tensor<double>& bb = layer.shift_net().bias.value();
  const Reach r = reach_of(spec);
  // Kernel cell of offset (0,0). Bottom/right kernels start one past it.
  const std::ptrdiff_t row0 = spec.orientation == Orientation::kBottom ? 0 : -r.row_lo;
  const std::ptrdiff_t col0 = spec.orientation == Orientation::kRight ? 0 : -r.col_lo;
  const auto visible = declared_receptive_field(spec, h, w);
  const auto order = autoregressive_order(spec.orientation, h, w);

  Tensor<double> x(s);
  std::vector<bool> known(h * w, false);
  std::size_t count = 0;
  for (std::size_t n = 0; n < s.n(); ++n) {
    std::fill(known.begin(), known.end(), false);
    for (std::size_t t : order) {
      const std::size_t ti = t / w, tj = t % w;
      std::vector<double> raw_s(c), raw_b(c);
      for (std::size_t k = 0; k < c; ++k) {
        raw_s[k] = bs[k];
        raw_b[k] = bb[k];
      }
      for (std::size_t u = 0; u < h * w; ++u) {
        if (!visible[t * h * w + u]) continue;
        require(known[u], ErrorCode::kValidation, "sequential oracle: dependency order violated");
        const auto a = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(u / w) - static_cast<std::ptrdiff_t>(ti) + row0);
        const auto b = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(u % w) - static_cast<std::ptrdiff_t>(tj) + col0);
        for (std::size_t ci = 0; ci < c; ++ci) {
          const double xv = x.at(n, u / w, u % w, ci);
          for (std::size_t co = 0; co < c; ++co) {
            raw_s[co] += xv * ws.at(a, b, ci, co);
            raw_b[co] += xv * wb.at(a, b, ci, co);
          }
        }
      }
      ++count;
      for (std::size_t k = 0; k < c; ++k) {
        const double scale = logistic(raw_s[k] + 2.0);
        require(scale > 0.0, ErrorCode::kInvertibility, "sequential oracle: scale underflow");
        x.at(n, ti, tj, k) = (y.at(n, ti, tj, k) - raw_b[k]) / scale;
      }
      known[t] = true;
    }
  }
  if (applications != nullptr) *applications = count / s.n();
  return x;
}

}  // namespace macow::oracle
