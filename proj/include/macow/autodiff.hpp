#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <type_traits>
#include <vector>

#include "macow/conv.hpp"
#include "macow/tensor.hpp"

// Tape-based eager reverse-mode differentiation over rank-4 tensors.
//
// Every op evaluates immediately. When a Tape is recording and at least one
// input requires a gradient, the op appends a backward rule to the tape;
// Tape::backward replays those rules in exact reverse order of recording.
// A Tape in Recording::kOff mode evaluates the same ops without recording,
// which is how inverse passes and inference reuse the training code.

namespace macow::ad {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0 for leaves
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  /// Direct mutation; meant for optimizers and data-dependent init only.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  /// Gradient buffer; zeros of the value's shape when nothing accumulated yet.
  Tensor<T>& grad() const;
  void accumulate_grad(const Tensor<T>& g) const;
  void zero_grad() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> parameter(Tensor<T> value);

template <typename T>
Var<T> constant(Tensor<T> value);

enum class Recording { kOn, kOff };

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<T>& grad_out)>;

  explicit Tape(Recording mode = Recording::kOn);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Recording::kOn; }
  std::size_t size() const { return entries_.size(); }
  std::uint64_t id() const { return id_; }

  /// Wraps an op result. The backward rule is stored only when recording and
  /// some input requires a gradient; it receives d(loss)/d(output).
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar loss. A tape supports one sweep per reset().
  void backward(const Var<T>& loss);
  void reset();

 private:
  struct Entry {
    std::shared_ptr<Node<T>> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  std::uint64_t id_;
  Recording mode_;
  bool consumed_ = false;
};

/// Subset of {0,1,2,3} as a bitmask.
struct Axes {
  unsigned mask = 0;

  static Axes of(std::initializer_list<int> axes);
  static constexpr Axes all() { return Axes{0xF}; }
  /// Every axis except the batch axis.
  static constexpr Axes per_item() { return Axes{0xE}; }
  constexpr bool contains(std::size_t axis) const { return (mask >> axis) & 1U; }
};

// Elementwise suite. Binary ops broadcast: each extent must match or be 1.
template <typename T> Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
/// Raises kNumeric on any zero divisor.
template <typename T> Var<T> div(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> neg(Tape<T>& tape, const Var<T>& x);
template <typename T> Var<T> exp(Tape<T>& tape, const Var<T>& x);
template <typename T> Var<T> log(Tape<T>& tape, const Var<T>& x);
template <typename T> Var<T> log_abs(Tape<T>& tape, const Var<T>& x);
template <typename T> Var<T> sigmoid(Tape<T>& tape, const Var<T>& x);
template <typename T> Var<T> log_sigmoid(Tape<T>& tape, const Var<T>& x);
/// ELU with alpha = 1.
template <typename T> Var<T> elu(Tape<T>& tape, const Var<T>& x);
template <typename T> Var<T> square(Tape<T>& tape, const Var<T>& x);
/// x * scale + shift, all broadcast.
template <typename T> Var<T> affine(Tape<T>& tape, const Var<T>& x, const Var<T>& scale, const Var<T>& shift);
template <typename T> Var<T> add_scalar(Tape<T>& tape, const Var<T>& x, T value);
template <typename T> Var<T> mul_scalar(Tape<T>& tape, const Var<T>& x, T value);
/// Gradient passes only where lo <= x <= hi.
template <typename T> Var<T> clamp(Tape<T>& tape, const Var<T>& x, T lo, T hi);

enum class Reduction { kSum, kMean, kLogSumExp };

/// Reduced axes are kept with extent 1.
template <typename T> Var<T> reduce(Tape<T>& tape, const Var<T>& x, Reduction op, Axes axes);
template <typename T> Var<T> sum(Tape<T>& tape, const Var<T>& x, Axes axes = Axes::all()) {
  return reduce(tape, x, Reduction::kSum, axes);
}
template <typename T> Var<T> mean(Tape<T>& tape, const Var<T>& x, Axes axes = Axes::all()) {
  return reduce(tape, x, Reduction::kMean, axes);
}

/// bias may be undefined; mask is [kh,kw,1,1] or null.
template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              std::type_identity_t<std::shared_ptr<const Tensor<T>>> mask, Anchor anchor);

template <typename T> Var<T> slice_channels(Tape<T>& tape, const Var<T>& x, std::size_t begin, std::size_t end);
template <typename T> Var<T> concat_channels(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> squeeze2x2(Tape<T>& tape, const Var<T>& x);
template <typename T> Var<T> unsqueeze2x2(Tape<T>& tape, const Var<T>& x);

/// y[..., o] = sum_i W[o, i] x[..., i] for W stored as [1,1,c,c].
template <typename T> Var<T> channel_matmul(Tape<T>& tape, const Var<T>& x, const Var<T>& weight);
/// log|det W| of W stored as [1,1,c,c]; scalar [1,1,1,1].
template <typename T> Var<T> log_abs_det(Tape<T>& tape, const Var<T>& weight);

/// Elementwise log N(z; mean, exp(log_std)^2), broadcast.
template <typename T>
Var<T> gaussian_log_density(Tape<T>& tape, const Var<T>& z, const Var<T>& mean, const Var<T>& log_std);

/// Broadcast extent check shared with the tensor-level helpers.
Shape broadcast_shape(const Shape& a, const Shape& b);

/// Sums g over the axes where target has extent 1 but g does not.
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& target);

}  // namespace macow::ad
