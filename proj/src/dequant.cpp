#include "macow/dequant.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace macow {

double bits_per_dim(double nats, std::size_t dims) { return nats / (static_cast<double>(dims) * std::numbers::ln2); }

template <typename T>
T dequantized_value(T x, double u) {
  T y = static_cast<T>(static_cast<double>(x) + u);
  const T next = x + T(1);
  if (y >= next) y = std::nextafter(next, x);
  if (y < x) y = x;
  return y;
}

template <typename T>
Dequantizer<T>::Dequantizer(const ModelConfig& cfg, Rng& init_rng) : cfg_(cfg), mode_(cfg.dequant) {
  if (mode_ == DequantMode::kUniform) return;
  const std::size_t c4 = 4 * cfg.channels;
  context_in_ = ConvParams<T>::random(3, 3, c4, cfg.dequant_hidden, init_rng, 0.05);
  context_out_ = ConvParams<T>::random(3, 3, cfg.dequant_hidden, cfg.dequant_context, init_rng, 0.05);
  std::vector<std::unique_ptr<FlowLayer<T>>> layers;
  std::vector<std::string> names;
  for (std::size_t u = 0; u < cfg.dequant_units; ++u) {
    const bool vertical = u % 2 == 0;
    layers.push_back(make_mcf_unit<T>(c4, cfg.kernel_h, cfg.kernel_w, vertical ? Orientation::kTop : Orientation::kLeft,
                                      vertical ? Orientation::kBottom : Orientation::kRight, cfg.dequant_context,
                                      false));
    names.push_back(fmt::format("unit{}", u));
  }
  layers.push_back(
      std::make_unique<Coupling<T>>(c4, cfg.dequant_hidden, cfg.dequant_coupling, init_rng, cfg.dequant_context));
  names.push_back("coupling");
  flow_ = std::make_unique<Sequential<T>>(LayerKind::kMcfUnit, std::move(layers), std::move(names));
}

template <typename T>
Tensor<T> Dequantizer<T>::draw_noise(const Shape& shape, Rng& rng) const {
  return mode_ == DequantMode::kUniform ? uniform_tensor<T>(shape, rng) : normal_tensor<T>(shape, rng);
}

template <typename T>
ad::Var<T> Dequantizer<T>::context(ad::Tape<T>& tape, const Tensor<T>& x) const {
  const double scale = std::ldexp(1.0, -static_cast<int>(cfg_.n_bits));
  Tensor<T> v(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) v[i] = static_cast<T>(x[i] * scale - 0.5);
  auto h = ad::elu(tape, context_in_.apply(tape, ad::constant(squeeze2x2(v)), nullptr, centered_anchor(3, 3)));
  return context_out_.apply(tape, h, nullptr, centered_anchor(3, 3));
}

template <typename T>
DequantDraw<T> Dequantizer<T>::dequantize(ad::Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& noise) {
  require(noise.shape() == x.shape(), ErrorCode::kDimension,
          fmt::format("noise shape {} does not match data {}", to_string(noise.shape()), to_string(x.shape())));
  const std::size_t n = x.shape().n();
  if (mode_ == DequantMode::kUniform) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = dequantized_value(x[i], static_cast<double>(noise[i]));
    return {ad::constant(std::move(y)), zero_logdet<T>(n)};
  }
  const auto zero = ad::constant(Tensor<T>::scalar(T(0)));
  const auto eps = ad::constant(noise);
  auto log_noise = ad::sum(tape, ad::gaussian_log_density(tape, eps, zero, zero), ad::Axes::per_item());
  const auto ctx = context(tape, x);
  auto r = flow_->forward(tape, ad::squeeze2x2(tape, eps), &ctx);
  auto logits = ad::unsqueeze2x2(tape, r.y);
  auto squash = ad::add(tape, ad::log_sigmoid(tape, logits), ad::log_sigmoid(tape, ad::neg(tape, logits)));
  auto squash_logdet = ad::sum(tape, squash, ad::Axes::per_item());
  auto log_q = ad::sub(tape, ad::sub(tape, log_noise, r.logdet), squash_logdet);
  auto u = ad::clamp(tape, ad::sigmoid(tape, logits), static_cast<T>(kMargin), static_cast<T>(1.0 - kMargin));
  auto y = ad::add(tape, ad::constant(x), u);
  // Rounding in T can push x + u onto x + 1; pull the value back without
  // touching the gradient path.
  Tensor<T>& yv = y.mutable_value();
  for (std::size_t i = 0; i < x.size(); ++i) yv[i] = dequantized_value(x[i], static_cast<double>(yv[i] - x[i]));
  return {y, log_q};
}

template <typename T>
std::vector<NamedParameter<T>> Dequantizer<T>::parameters() {
  std::vector<NamedParameter<T>> out;
  if (mode_ == DequantMode::kUniform) return out;
  context_in_.append_to(out, "dequant/context/in/");
  context_out_.append_to(out, "dequant/context/out/");
  for (auto& p : flow_->parameters()) out.push_back({"dequant/flow/" + p.name, p.var});
  return out;
}

template <typename T>
std::vector<NamedFlag> Dequantizer<T>::flags() {
  std::vector<NamedFlag> out;
  if (!flow_) return out;
  for (auto& f : flow_->flags()) out.push_back({"dequant/flow/" + f.name, f.value});
  return out;
}

template <typename T>
std::size_t Dequantizer<T>::parameter_count() {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.var.value().size();
  return total;
}

template <typename T>
void Dequantizer<T>::randomize(Rng& rng, double scale) {
  if (mode_ == DequantMode::kUniform) return;
  context_in_.randomize(rng, scale);
  context_out_.randomize(rng, scale);
  flow_->randomize(rng, scale);
}

template <typename T>
Objective<T> nll_objective(ad::Tape<T>& tape, Model<T>& model, Dequantizer<T>& deq, const Tensor<T>& x,
                           const Tensor<T>& noise) {
  auto draw = deq.dequantize(tape, x, noise);
  auto per_item = ad::sub(tape, draw.log_q, model.log_prob(tape, draw.y));
  Objective<T> out;
  out.loss = ad::mean(tape, per_item);
  out.nll_nats = Tensor<double>(Shape{x.shape().n(), 1, 1, 1});
  for (std::size_t i = 0; i < x.shape().n(); ++i) out.nll_nats[i] = static_cast<double>(per_item.value()[i]);
  return out;
}

template <typename T>
std::vector<double> importance_weighted_bound(Model<T>& model, Dequantizer<T>& deq, const Tensor<T>& x,
                                              std::size_t k, Rng& rng) {
  require(k >= 1, ErrorCode::kValidation, "importance sample count must be at least 1");
  const std::size_t n = x.shape().n();
  std::vector<std::vector<double>> log_w(n, std::vector<double>(k));
  for (std::size_t s = 0; s < k; ++s) {
    ad::Tape<T> tape(ad::Recording::kOff);
    auto draw = deq.dequantize(tape, x, deq.draw_noise(x.shape(), rng));
    auto lp = model.log_prob(tape, draw.y);
    for (std::size_t i = 0; i < n; ++i)
      log_w[i][s] = static_cast<double>(lp.value()[i]) - static_cast<double>(draw.log_q.value()[i]);
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double top = *std::max_element(log_w[i].begin(), log_w[i].end());
    double acc = 0;
    for (double w : log_w[i]) acc += std::exp(w - top);
    out[i] = top + std::log(acc / static_cast<double>(k));
  }
  return out;
}

#define MACOW_INSTANTIATE(T)                                                                                        \
  template T dequantized_value<T>(T, double);                                                                       \
  template class Dequantizer<T>;                                                                                    \
  template Objective<T> nll_objective(ad::Tape<T>&, Model<T>&, Dequantizer<T>&, const Tensor<T>&,                   \
                                      const Tensor<T>&);                                                            \
  template std::vector<double> importance_weighted_bound(Model<T>&, Dequantizer<T>&, const Tensor<T>&, std::size_t, \
                                                         Rng&);
MACOW_INSTANTIATE(float)
MACOW_INSTANTIATE(double)
#undef MACOW_INSTANTIATE

}  // namespace macow
