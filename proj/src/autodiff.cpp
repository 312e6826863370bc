#include "macow/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "macow/linalg.hpp"

namespace macow::ad {

namespace {

std::atomic<std::uint64_t> g_next_tape_id{1};

using Strides = std::array<std::size_t, 4>;

Strides natural_strides(const Shape& s) { return {s.h() * s.w() * s.c(), s.w() * s.c(), s.c(), 1}; }

// Strides that read `small` while iterating over `big`; broadcast axes get 0.
Strides view_strides(const Shape& small, const Shape& big) {
  Strides st = natural_strides(small);
  for (std::size_t d = 0; d < 4; ++d)
    if (small[d] == 1 && big[d] != 1) st[d] = 0;
  return st;
}

template <typename F>
void for_each_index(const Shape& s, const Strides& sa, const Strides& sb, F&& f) {
  std::size_t out = 0;
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t i = 0; i < s.h(); ++i)
      for (std::size_t j = 0; j < s.w(); ++j) {
        const std::size_t base_a = n * sa[0] + i * sa[1] + j * sa[2];
        const std::size_t base_b = n * sb[0] + i * sb[1] + j * sb[2];
        for (std::size_t k = 0; k < s.c(); ++k) f(out++, base_a + k * sa[3], base_b + k * sb[3]);
      }
}

template <typename T, typename F>
Tensor<T> broadcast_map(const Tensor<T>& a, const Tensor<T>& b, F f) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(out_shape);
  if (a.shape() == out_shape && b.shape() == out_shape) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  for_each_index(out_shape, view_strides(a.shape(), out_shape), view_strides(b.shape(), out_shape),
                 [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = f(a[ia], b[ib]); });
  return out;
}

template <typename T, typename F>
Tensor<T> unary_map(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!all_finite(t)) fail(ErrorCode::kNumeric, fmt::format("non-finite result in {}", op));
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T stable_log_sigmoid(T x) {
  return std::min(x, T(0)) - std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
bool tracking(const Tape<T>& tape, std::initializer_list<Var<T>> inputs) {
  return tape.recording() &&
         std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  Shape out;
  for (std::size_t d = 0; d < 4; ++d) {
    if (a[d] == b[d] || b[d] == 1) {
      out.dims[d] = a[d];
    } else if (a[d] == 1) {
      out.dims[d] = b[d];
    } else {
      fail(ErrorCode::kDimension, "shapes " + to_string(a) + " and " + to_string(b) + " are not broadcastable");
    }
  }
  return out;
}

template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  require(broadcast_shape(target, g.shape()) == g.shape(), ErrorCode::kDimension,
          "cannot reduce " + to_string(g.shape()) + " to " + to_string(target));
  Tensor<T> out(target);
  const Strides unit{0, 0, 0, 0};
  for_each_index(g.shape(), view_strides(target, g.shape()), unit,
                 [&](std::size_t src, std::size_t dst, std::size_t) { out[dst] += g[src]; });
  return out;
}

// ---------------------------------------------------------------------------
// Var / Tape

template <typename T>
Tensor<T>& Var<T>::grad() const {
  if (node_->grad.empty()) node_->grad = Tensor<T>(node_->value.shape());
  return node_->grad;
}

template <typename T>
void Var<T>::accumulate_grad(const Tensor<T>& g) const {
  require(g.shape() == shape(), ErrorCode::kDimension,
          "gradient shape " + to_string(g.shape()) + " does not match value " + to_string(shape()));
  if (node_->grad.empty()) {
    node_->grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) node_->grad[i] += g[i];
}

template <typename T>
void Var<T>::zero_grad() const {
  if (node_) node_->grad = Tensor<T>();
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var<T>(std::move(node));
}

template <typename T>
Tape<T>::Tape(Recording mode) : id_(g_next_tape_id.fetch_add(1)), mode_(mode) {}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (recording()) {
    const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
    if (needs) {
      for (const auto& in : inputs)
        require(!in.defined() || in.node()->tape_id == 0 || in.node()->tape_id == id_, ErrorCode::kState,
                "op mixes intermediates from different tapes (detached graph)");
      require(!consumed_, ErrorCode::kState, "recording onto a tape that was already swept; call reset()");
      node->requires_grad = true;
      node->tape_id = id_;
      entries_.push_back(Entry{node, std::move(backward)});
    }
  }
  return Var<T>(std::move(node));
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  require(loss.defined(), ErrorCode::kState, "backward on an undefined variable");
  require(loss.value().size() == 1, ErrorCode::kDimension,
          "backward needs a scalar loss, got " + to_string(loss.shape()));
  require(!consumed_, ErrorCode::kState, "backward called twice on the same tape without reset()");
  require(loss.requires_grad(), ErrorCode::kState, "loss does not depend on any parameter (detached graph)");
  require(loss.node()->tape_id == id_, ErrorCode::kState, "loss was not recorded on this tape (detached graph)");
  consumed_ = true;
  Var<T> seed = loss;
  seed.accumulate_grad(Tensor<T>(loss.shape(), T(1)));
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
  }
  entries_.clear();
}

template <typename T>
void Tape<T>::reset() {
  entries_.clear();
  consumed_ = false;
  id_ = g_next_tape_id.fetch_add(1);
}

Axes Axes::of(std::initializer_list<int> axes) {
  Axes a;
  for (int ax : axes) {
    require(ax >= 0 && ax < 4, ErrorCode::kValidation, fmt::format("invalid axis {}", ax));
    a.mask |= 1U << static_cast<unsigned>(ax);
  }
  return a;
}

// ---------------------------------------------------------------------------
// Elementwise suite

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  auto out = broadcast_map(a.value(), b.value(), [](T x, T y) { return x + y; });
  check_finite(out, "add");
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor<T>& g) mutable {
    if (a.requires_grad()) a.accumulate_grad(reduce_to_shape(g, a.shape()));
    if (b.requires_grad()) b.accumulate_grad(reduce_to_shape(g, b.shape()));
  });
}

template <typename T>
Var<T> sub(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  auto out = broadcast_map(a.value(), b.value(), [](T x, T y) { return x - y; });
  check_finite(out, "sub");
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor<T>& g) mutable {
    if (a.requires_grad()) a.accumulate_grad(reduce_to_shape(g, a.shape()));
    if (b.requires_grad()) b.accumulate_grad(reduce_to_shape(unary_map(g, [](T v) { return -v; }), b.shape()));
  });
}

template <typename T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  auto out = broadcast_map(a.value(), b.value(), [](T x, T y) { return x * y; });
  check_finite(out, "mul");
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor<T>& g) mutable {
    auto times = [](T x, T y) { return x * y; };
    if (a.requires_grad()) a.accumulate_grad(reduce_to_shape(broadcast_map(g, b.value(), times), a.shape()));
    if (b.requires_grad()) b.accumulate_grad(reduce_to_shape(broadcast_map(g, a.value(), times), b.shape()));
  });
}

template <typename T>
Var<T> div(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  for (T v : b.value().data()) require(v != T(0), ErrorCode::kNumeric, "division by zero");
  auto out = broadcast_map(a.value(), b.value(), [](T x, T y) { return x / y; });
  check_finite(out, "div");
  Tensor<T> quotient = tracking(tape, {a, b}) ? out : Tensor<T>();
  return tape.record(std::move(out), {a, b}, [a, b, quotient](const Tensor<T>& g) mutable {
    auto ratio = [](T x, T y) { return x / y; };
    if (a.requires_grad()) a.accumulate_grad(reduce_to_shape(broadcast_map(g, b.value(), ratio), a.shape()));
    if (b.requires_grad()) {
      // d(a/b)/db = -(a/b)/b
      auto gq = broadcast_map(g, quotient, [](T x, T y) { return -x * y; });
      b.accumulate_grad(reduce_to_shape(broadcast_map(gq, b.value(), ratio), b.shape()));
    }
  });
}

template <typename T>
Var<T> neg(Tape<T>& tape, const Var<T>& x) {
  return tape.record(unary_map(x.value(), [](T v) { return -v; }), {x}, [x](const Tensor<T>& g) mutable {
    x.accumulate_grad(unary_map(g, [](T v) { return -v; }));
  });
}

template <typename T>
Var<T> exp(Tape<T>& tape, const Var<T>& x) {
  auto out = unary_map(x.value(), [](T v) { return std::exp(v); });
  check_finite(out, "exp");
  Tensor<T> e = tracking(tape, {x}) ? out : Tensor<T>();
  return tape.record(std::move(out), {x}, [x, e](const Tensor<T>& g) mutable {
    x.accumulate_grad(broadcast_map(g, e, [](T gv, T ev) { return gv * ev; }));
  });
}

template <typename T>
Var<T> log(Tape<T>& tape, const Var<T>& x) {
  for (T v : x.value().data()) require(v > T(0), ErrorCode::kNumeric, "log of a non-positive value");
  auto out = unary_map(x.value(), [](T v) { return std::log(v); });
  check_finite(out, "log");
  return tape.record(std::move(out), {x}, [x](const Tensor<T>& g) mutable {
    x.accumulate_grad(broadcast_map(g, x.value(), [](T gv, T xv) { return gv / xv; }));
  });
}

template <typename T>
Var<T> log_abs(Tape<T>& tape, const Var<T>& x) {
  for (T v : x.value().data()) require(v != T(0), ErrorCode::kNumeric, "log|x| of zero");
  auto out = unary_map(x.value(), [](T v) { return std::log(std::abs(v)); });
  check_finite(out, "log_abs");
  return tape.record(std::move(out), {x}, [x](const Tensor<T>& g) mutable {
    x.accumulate_grad(broadcast_map(g, x.value(), [](T gv, T xv) { return gv / xv; }));
  });
}

template <typename T>
Var<T> sigmoid(Tape<T>& tape, const Var<T>& x) {
  auto out = unary_map(x.value(), [](T v) { return stable_sigmoid(v); });
  Tensor<T> s = tracking(tape, {x}) ? out : Tensor<T>();
  return tape.record(std::move(out), {x}, [x, s](const Tensor<T>& g) mutable {
    x.accumulate_grad(broadcast_map(g, s, [](T gv, T sv) { return gv * sv * (T(1) - sv); }));
  });
}

template <typename T>
Var<T> log_sigmoid(Tape<T>& tape, const Var<T>& x) {
  auto out = unary_map(x.value(), [](T v) { return stable_log_sigmoid(v); });
  check_finite(out, "log_sigmoid");
  return tape.record(std::move(out), {x}, [x](const Tensor<T>& g) mutable {
    x.accumulate_grad(broadcast_map(g, x.value(), [](T gv, T xv) { return gv * stable_sigmoid(-xv); }));
  });
}

template <typename T>
Var<T> elu(Tape<T>& tape, const Var<T>& x) {
  auto out = unary_map(x.value(), [](T v) { return v > T(0) ? v : std::expm1(v); });
  return tape.record(std::move(out), {x}, [x](const Tensor<T>& g) mutable {
    x.accumulate_grad(broadcast_map(g, x.value(), [](T gv, T xv) { return xv > T(0) ? gv : gv * std::exp(xv); }));
  });
}

template <typename T>
Var<T> square(Tape<T>& tape, const Var<T>& x) {
  auto out = unary_map(x.value(), [](T v) { return v * v; });
  check_finite(out, "square");
  return tape.record(std::move(out), {x}, [x](const Tensor<T>& g) mutable {
    x.accumulate_grad(broadcast_map(g, x.value(), [](T gv, T xv) { return T(2) * gv * xv; }));
  });
}

template <typename T>
Var<T> affine(Tape<T>& tape, const Var<T>& x, const Var<T>& scale, const Var<T>& shift) {
  auto scaled = broadcast_map(x.value(), scale.value(), [](T a, T b) { return a * b; });
  auto out = broadcast_map(scaled, shift.value(), [](T a, T b) { return a + b; });
  check_finite(out, "affine");
  return tape.record(std::move(out), {x, scale, shift}, [x, scale, shift](const Tensor<T>& g) mutable {
    auto times = [](T a, T b) { return a * b; };
    if (x.requires_grad()) x.accumulate_grad(reduce_to_shape(broadcast_map(g, scale.value(), times), x.shape()));
    if (scale.requires_grad())
      scale.accumulate_grad(reduce_to_shape(broadcast_map(g, x.value(), times), scale.shape()));
    if (shift.requires_grad()) shift.accumulate_grad(reduce_to_shape(g, shift.shape()));
  });
}

template <typename T>
Var<T> add_scalar(Tape<T>& tape, const Var<T>& x, T value) {
  auto out = unary_map(x.value(), [value](T v) { return v + value; });
  check_finite(out, "add_scalar");
  return tape.record(std::move(out), {x}, [x](const Tensor<T>& g) mutable { x.accumulate_grad(g); });
}

template <typename T>
Var<T> mul_scalar(Tape<T>& tape, const Var<T>& x, T value) {
  auto out = unary_map(x.value(), [value](T v) { return v * value; });
  check_finite(out, "mul_scalar");
  return tape.record(std::move(out), {x}, [x, value](const Tensor<T>& g) mutable {
    x.accumulate_grad(unary_map(g, [value](T v) { return v * value; }));
  });
}

template <typename T>
Var<T> clamp(Tape<T>& tape, const Var<T>& x, T lo, T hi) {
  auto out = unary_map(x.value(), [lo, hi](T v) { return std::clamp(v, lo, hi); });
  return tape.record(std::move(out), {x}, [x, lo, hi](const Tensor<T>& g) mutable {
    x.accumulate_grad(
        broadcast_map(g, x.value(), [lo, hi](T gv, T xv) { return (xv >= lo && xv <= hi) ? gv : T(0); }));
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> reduce(Tape<T>& tape, const Var<T>& x, Reduction op, Axes axes) {
  require(axes.mask <= 0xF, ErrorCode::kValidation, "invalid reduction axes");
  const Shape& in = x.shape();
  Shape out_shape = in;
  std::size_t count = 1;
  for (std::size_t d = 0; d < 4; ++d) {
    if (axes.contains(d)) {
      count *= in[d];
      out_shape.dims[d] = 1;
    }
  }
  const Strides to_out = view_strides(out_shape, in);
  const Strides unit{0, 0, 0, 0};
  const Tensor<T>& xv = x.value();
  Tensor<T> out(out_shape);

  if (op == Reduction::kLogSumExp) {
    require(count > 0, ErrorCode::kDimension, "logsumexp over an empty axis");
    Tensor<T> peak(out_shape, -std::numeric_limits<T>::infinity());
    for_each_index(in, to_out, unit, [&](std::size_t src, std::size_t dst, std::size_t) {
      peak[dst] = std::max(peak[dst], xv[src]);
    });
    for_each_index(in, to_out, unit,
                   [&](std::size_t src, std::size_t dst, std::size_t) { out[dst] += std::exp(xv[src] - peak[dst]); });
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = peak[i] + std::log(out[i]);
  } else {
    for_each_index(in, to_out, unit, [&](std::size_t src, std::size_t dst, std::size_t) { out[dst] += xv[src]; });
    if (op == Reduction::kMean) {
      require(count > 0, ErrorCode::kDimension, "mean over an empty axis");
      for (auto& v : out.data()) v /= static_cast<T>(count);
    }
  }
  check_finite(out, "reduce");
  Tensor<T> result = tracking(tape, {x}) ? out : Tensor<T>();
  return tape.record(std::move(out), {x}, [x, op, to_out, count, result](const Tensor<T>& g) mutable {
    const Shape& in_shape = x.shape();
    Tensor<T> gx(in_shape);
    const Strides zero{0, 0, 0, 0};
    const Tensor<T>& xval = x.value();
    for_each_index(in_shape, to_out, zero, [&](std::size_t src, std::size_t dst, std::size_t) {
      switch (op) {
        case Reduction::kSum: gx[src] = g[dst]; break;
        case Reduction::kMean: gx[src] = g[dst] / static_cast<T>(count); break;
        case Reduction::kLogSumExp: gx[src] = g[dst] * std::exp(xval[src] - result[dst]); break;
      }
    });
    x.accumulate_grad(gx);
  });
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              std::type_identity_t<std::shared_ptr<const Tensor<T>>> mask, Anchor anchor) {
  const Tensor<T>* b = bias.defined() ? &bias.value() : nullptr;
  auto out = conv2d_forward(x.value(), weight.value(), b, mask.get(), anchor);
  check_finite(out, "conv2d");
  if (bias.defined()) {
    return tape.record(std::move(out), {x, weight, bias}, [x, weight, bias, mask, anchor](const Tensor<T>& g) mutable {
      Tensor<T> gx, gw, gb;
      if (x.requires_grad()) gx = Tensor<T>(x.shape());
      if (weight.requires_grad()) gw = Tensor<T>(weight.shape());
      if (bias.requires_grad()) gb = Tensor<T>(bias.shape());
      conv2d_backward(x.value(), weight.value(), mask.get(), anchor, g, x.requires_grad() ? &gx : nullptr,
                      weight.requires_grad() ? &gw : nullptr, bias.requires_grad() ? &gb : nullptr);
      if (x.requires_grad()) x.accumulate_grad(gx);
      if (weight.requires_grad()) weight.accumulate_grad(gw);
      if (bias.requires_grad()) bias.accumulate_grad(gb);
    });
  }
  return tape.record(std::move(out), {x, weight}, [x, weight, mask, anchor](const Tensor<T>& g) mutable {
    Tensor<T> gx, gw;
    if (x.requires_grad()) gx = Tensor<T>(x.shape());
    if (weight.requires_grad()) gw = Tensor<T>(weight.shape());
    conv2d_backward(x.value(), weight.value(), mask.get(), anchor, g, x.requires_grad() ? &gx : nullptr,
                    weight.requires_grad() ? &gw : nullptr, static_cast<Tensor<T>*>(nullptr));
    if (x.requires_grad()) x.accumulate_grad(gx);
    if (weight.requires_grad()) weight.accumulate_grad(gw);
  });
}

template <typename T>
Var<T> slice_channels(Tape<T>& tape, const Var<T>& x, std::size_t begin, std::size_t end) {
  return tape.record(macow::slice_channels(x.value(), begin, end), {x}, [x, begin, end](const Tensor<T>& g) mutable {
    Tensor<T> gx(x.shape());
    const std::size_t c = x.shape().c();
    const std::size_t width = end - begin;
    const std::size_t rows = gx.size() / c;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < width; ++k) gx[r * c + begin + k] = g[r * width + k];
    x.accumulate_grad(gx);
  });
}

template <typename T>
Var<T> concat_channels(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  const std::size_t ca = a.shape().c();
  const std::size_t cb = b.shape().c();
  return tape.record(macow::concat_channels(a.value(), b.value()), {a, b}, [a, b, ca, cb](const Tensor<T>& g) mutable {
    if (a.requires_grad()) a.accumulate_grad(macow::slice_channels(g, 0, ca));
    if (b.requires_grad()) b.accumulate_grad(macow::slice_channels(g, ca, ca + cb));
  });
}

template <typename T>
Var<T> squeeze2x2(Tape<T>& tape, const Var<T>& x) {
  return tape.record(macow::squeeze2x2(x.value()), {x},
                     [x](const Tensor<T>& g) mutable { x.accumulate_grad(macow::unsqueeze2x2(g)); });
}

template <typename T>
Var<T> unsqueeze2x2(Tape<T>& tape, const Var<T>& x) {
  return tape.record(macow::unsqueeze2x2(x.value()), {x},
                     [x](const Tensor<T>& g) mutable { x.accumulate_grad(macow::squeeze2x2(g)); });
}

template <typename T>
Var<T> channel_matmul(Tape<T>& tape, const Var<T>& x, const Var<T>& weight) {
  const std::size_t c = x.shape().c();
  require(weight.shape() == Shape(1, 1, c, c), ErrorCode::kDimension,
          "channel_matmul weight must be [1,1,c,c], got " + to_string(weight.shape()));
  const std::size_t rows = x.value().size() / c;
  Tensor<T> out(x.shape());
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = weight.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < c; ++o) {
      T acc = 0;
      for (std::size_t i = 0; i < c; ++i) acc += wv[o * c + i] * xv[r * c + i];
      out[r * c + o] = acc;
    }
  check_finite(out, "channel_matmul");
  return tape.record(std::move(out), {x, weight}, [x, weight, c, rows](const Tensor<T>& g) mutable {
    const Tensor<T>& xval = x.value();
    const Tensor<T>& wval = weight.value();
    if (x.requires_grad()) {
      Tensor<T> gx(x.shape());
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < c; ++o) {
          const T go = g[r * c + o];
          for (std::size_t i = 0; i < c; ++i) gx[r * c + i] += wval[o * c + i] * go;
        }
      x.accumulate_grad(gx);
    }
    if (weight.requires_grad()) {
      Tensor<T> gw(weight.shape());
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < c; ++o) {
          const T go = g[r * c + o];
          for (std::size_t i = 0; i < c; ++i) gw[o * c + i] += go * xval[r * c + i];
        }
      weight.accumulate_grad(gw);
    }
  });
}

template <typename T>
Var<T> log_abs_det(Tape<T>& tape, const Var<T>& weight) {
  const std::size_t c = weight.shape()[3];
  require(weight.shape() == Shape(1, 1, c, c), ErrorCode::kDimension, "log_abs_det expects [1,1,c,c]");
  std::vector<double> w(weight.value().data().begin(), weight.value().data().end());
  linalg::LuDecomposition<double> lu(w, c);
  const double value = lu.log_abs_det();
  return tape.record(Tensor<T>::scalar(static_cast<T>(value)), {weight}, [weight, lu, c](const Tensor<T>& g) mutable {
    // d log|det W| / dW = W^{-T}
    const auto inv = lu.inverse();
    Tensor<T> gw(weight.shape());
    for (std::size_t r = 0; r < c; ++r)
      for (std::size_t k = 0; k < c; ++k) gw[r * c + k] = g[0] * static_cast<T>(inv[k * c + r]);
    weight.accumulate_grad(gw);
  });
}

template <typename T>
Var<T> gaussian_log_density(Tape<T>& tape, const Var<T>& z, const Var<T>& mean, const Var<T>& log_std) {
  const T half_log_two_pi = static_cast<T>(0.5 * std::log(2.0 * std::numbers::pi));
  auto centered = sub(tape, z, mean);
  auto scaled = mul(tape, centered, exp(tape, neg(tape, log_std)));
  auto quad = mul_scalar(tape, square(tape, scaled), T(-0.5));
  return add_scalar(tape, sub(tape, quad, log_std), -half_log_two_pi);
}

#define MACOW_INSTANTIATE(T)                                                                                    \
  template class Var<T>;                                                                                        \
  template class Tape<T>;                                                                                       \
  template Var<T> parameter(Tensor<T>);                                                                         \
  template Var<T> constant(Tensor<T>);                                                                          \
  template Tensor<T> reduce_to_shape(const Tensor<T>&, const Shape&);                                           \
  template Var<T> add(Tape<T>&, const Var<T>&, const Var<T>&);                                                  \
  template Var<T> sub(Tape<T>&, const Var<T>&, const Var<T>&);                                                  \
  template Var<T> mul(Tape<T>&, const Var<T>&, const Var<T>&);                                                  \
  template Var<T> div(Tape<T>&, const Var<T>&, const Var<T>&);                                                  \
  template Var<T> neg(Tape<T>&, const Var<T>&);                                                                 \
  template Var<T> exp(Tape<T>&, const Var<T>&);                                                                 \
  template Var<T> log(Tape<T>&, const Var<T>&);                                                                 \
  template Var<T> log_abs(Tape<T>&, const Var<T>&);                                                             \
  template Var<T> sigmoid(Tape<T>&, const Var<T>&);                                                             \
  template Var<T> log_sigmoid(Tape<T>&, const Var<T>&);                                                         \
  template Var<T> elu(Tape<T>&, const Var<T>&);                                                                 \
  template Var<T> square(Tape<T>&, const Var<T>&);                                                              \
  template Var<T> affine(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&);                                \
  template Var<T> add_scalar(Tape<T>&, const Var<T>&, T);                                                       \
  template Var<T> mul_scalar(Tape<T>&, const Var<T>&, T);                                                       \
  template Var<T> clamp(Tape<T>&, const Var<T>&, T, T);                                                         \
  template Var<T> reduce(Tape<T>&, const Var<T>&, Reduction, Axes);                                             \
  template Var<T> conv2d(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&, std::shared_ptr<const Tensor<T>>, \
                         Anchor);                                                                               \
  template Var<T> slice_channels(Tape<T>&, const Var<T>&, std::size_t, std::size_t);                            \
  template Var<T> concat_channels(Tape<T>&, const Var<T>&, const Var<T>&);                                      \
  template Var<T> squeeze2x2(Tape<T>&, const Var<T>&);                                                          \
  template Var<T> unsqueeze2x2(Tape<T>&, const Var<T>&);                                                        \
  template Var<T> channel_matmul(Tape<T>&, const Var<T>&, const Var<T>&);                                       \
  template Var<T> log_abs_det(Tape<T>&, const Var<T>&);                                                         \
  template Var<T> gaussian_log_density(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&);

MACOW_INSTANTIATE(float)
MACOW_INSTANTIATE(double)

}  // namespace macow::ad
