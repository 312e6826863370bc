#pragma once

#include <memory>
#include <vector>

#include "macow/config.hpp"
#include "macow/model.hpp"

namespace macow {

template <typename T>
struct DequantDraw {
  ad::Var<T> y;      // x + u, data coordinates, floor(y) == x
  ad::Var<T> log_q;  // log q(u | x) per item, [n,1,1,1]
};

/// Turns integer pixels x into continuous y = x + u with u in (0, 1).
///
/// Uniform mode: u is the noise itself and log q = 0. Variational mode: the
/// noise is standard normal; a conditional flow over the squeezed image (MCF
/// units, then one coupling) maps it to logits and u = sigmoid(logits). The
/// context is conv3x3 -> ELU -> conv3x3 on x scaled to [-0.5, 0.5].
template <typename T>
class Dequantizer {
 public:
  Dequantizer(const ModelConfig& cfg, Rng& init_rng);

  DequantMode mode() const { return mode_; }
  /// Noise of the right distribution for dequantize(): U[0,1) or N(0,1).
  Tensor<T> draw_noise(const Shape& shape, Rng& rng) const;
  DequantDraw<T> dequantize(ad::Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& noise);

  std::vector<NamedParameter<T>> parameters();
  std::vector<NamedFlag> flags();
  std::size_t parameter_count();
  void randomize(Rng& rng, double scale);

  /// u is kept inside [kMargin, 1 - kMargin].
  static constexpr double kMargin = 1e-6;

 private:
  ad::Var<T> context(ad::Tape<T>& tape, const Tensor<T>& x) const;

  ModelConfig cfg_;
  DequantMode mode_;
  ConvParams<T> context_in_;
  ConvParams<T> context_out_;
  std::unique_ptr<Sequential<T>> flow_;
};

template <typename T>
struct Objective {
  ad::Var<T> loss;           // mean over the batch of log q - log p, nats per item
  Tensor<double> nll_nats;   // per item
};

/// One-sample dequantized negative log-likelihood for integer batch x.
template <typename T>
Objective<T> nll_objective(ad::Tape<T>& tape, Model<T>& model, Dequantizer<T>& deq, const Tensor<T>& x,
                           const Tensor<T>& noise);

/// Per-item log of the K-sample importance-weighted estimate
/// mean_k p(x + u_k) / q(u_k | x), in nats. K = 1 is the plain bound.
template <typename T>
std::vector<double> importance_weighted_bound(Model<T>& model, Dequantizer<T>& deq, const Tensor<T>& x,
                                              std::size_t k, Rng& rng);

double bits_per_dim(double nats, std::size_t dims);

/// Floor-safe x + u: the result never rounds up to x + 1 in type T.
template <typename T>
T dequantized_value(T x, double u);

}  // namespace macow
