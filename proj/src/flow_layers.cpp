#include "macow/flow_layers.hpp"

#include <cmath>

#include <fmt/format.h>

#include "macow/linalg.hpp"

namespace macow {

namespace {
constexpr double kScaleOffset = 2.0;  // s = sigmoid(raw + 2)
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kActNorm: return "actnorm";
    case LayerKind::kInvertible1x1: return "inv1x1";
    case LayerKind::kAffineCoupling: return "coupling_affine";
    case LayerKind::kAdditiveCoupling: return "coupling_additive";
    case LayerKind::kSqueeze: return "squeeze";
    case LayerKind::kUnsqueeze: return "unsqueeze";
    case LayerKind::kMaskedConvTop: return "mcf_top";
    case LayerKind::kMaskedConvBottom: return "mcf_bottom";
    case LayerKind::kMaskedConvLeft: return "mcf_left";
    case LayerKind::kMaskedConvRight: return "mcf_right";
    case LayerKind::kMcfUnit: return "mcf_unit";
    case LayerKind::kCount: break;
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// ConvParams

template <typename T>
ConvParams<T> ConvParams<T>::zeros(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout,
                                   bool with_bias) {
  ConvParams p;
  p.weight = ad::parameter(Tensor<T>(Shape{kh, kw, cin, cout}));
  if (with_bias) p.bias = ad::parameter(Tensor<T>(Shape{1, 1, 1, cout}));
  return p;
}

template <typename T>
ConvParams<T> ConvParams<T>::random(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout, Rng& rng,
                                    double stddev) {
  ConvParams p;
  p.weight = ad::parameter(normal_tensor<T>(Shape{kh, kw, cin, cout}, rng, stddev));
  p.bias = ad::parameter(Tensor<T>(Shape{1, 1, 1, cout}));
  return p;
}

template <typename T>
void ConvParams<T>::randomize(Rng& rng, double stddev) {
  // Weights scaled by fan-in so stddev is roughly the output gain.
  const Shape& w = weight.shape();
  const double fan_in = static_cast<double>(w[0] * w[1] * w[2]);
  weight.mutable_value() = normal_tensor<T>(w, rng, stddev / std::sqrt(fan_in));
  if (bias.defined()) bias.mutable_value() = normal_tensor<T>(bias.shape(), rng, stddev);
}

template <typename T>
ad::Var<T> ConvParams<T>::apply(ad::Tape<T>& tape, const ad::Var<T>& x, std::shared_ptr<const Tensor<T>> mask,
                                Anchor anchor) const {
  return ad::conv2d(tape, x, weight, bias, std::move(mask), anchor);
}

template <typename T>
void ConvParams<T>::append_to(std::vector<NamedParameter<T>>& out, const std::string& prefix) const {
  out.push_back({prefix + "weight", weight});
  if (bias.defined()) out.push_back({prefix + "bias", bias});
}

// ---------------------------------------------------------------------------
// ActNorm

template <typename T>
ActNorm<T>::ActNorm(std::size_t channels, bool data_init)
    : channels_(channels),
      scale_(ad::parameter(Tensor<T>(Shape{1, 1, 1, channels}, T(1)))),
      bias_(ad::parameter(Tensor<T>(Shape{1, 1, 1, channels}))),
      initialized_(!data_init) {}

template <typename T>
void ActNorm<T>::initialize_from(const Tensor<T>& x) {
  const std::size_t c = channels_;
  const std::size_t rows = x.size() / c;
  require(rows > 0, ErrorCode::kDimension, "ActNorm initialization on an empty batch");
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) mean[k] += static_cast<double>(x[r * c + k]);
  for (auto& m : mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      const double d = static_cast<double>(x[r * c + k]) - mean[k];
      var[k] += d * d;
    }
  Tensor<T>& s = scale_.mutable_value();
  Tensor<T>& b = bias_.mutable_value();
  for (std::size_t k = 0; k < c; ++k) {
    double sd = std::sqrt(var[k] / static_cast<double>(rows));
    if (sd < kStdFloor) {
      warn(fmt::format("ActNorm channel {} has zero variance at initialization; flooring std at {}", k, kStdFloor));
      sd = kStdFloor;
    }
    s[k] = static_cast<T>(1.0 / sd);
    b[k] = static_cast<T>(-mean[k] / sd);
  }
  initialized_ = true;
}

template <typename T>
void ActNorm<T>::check_scale() const {
  for (T v : scale_.value().data())
    require(v != T(0), ErrorCode::kInvertibility, "ActNorm scale contains zero");
}

template <typename T>
FlowResult<T> ActNorm<T>::forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>*) {
  require(x.shape().c() == channels_, ErrorCode::kDimension,
          fmt::format("ActNorm expects {} channels, got {}", channels_, x.shape().c()));
  if (!initialized_) initialize_from(x.value());
  check_scale();
  auto y = ad::affine(tape, x, scale_, bias_);
  const auto hw = static_cast<T>(x.shape().h() * x.shape().w());
  auto logdet = ad::mul_scalar(tape, ad::sum(tape, ad::log_abs(tape, scale_)), hw);
  return {y, per_item_logdet(tape, logdet, x.shape().n())};
}

template <typename T>
Tensor<T> ActNorm<T>::inverse(const Tensor<T>& y, const Tensor<T>*) const {
  require(initialized_, ErrorCode::kState, "ActNorm inverse before initialization");
  require(y.shape().c() == channels_, ErrorCode::kDimension, "ActNorm inverse channel mismatch");
  check_scale();
  Tensor<T> x(y.shape());
  const Tensor<T>& s = scale_.value();
  const Tensor<T>& b = bias_.value();
  const std::size_t c = channels_;
  for (std::size_t i = 0; i < y.size(); ++i) x[i] = (y[i] - b[i % c]) / s[i % c];
  return x;
}

template <typename T>
std::vector<NamedParameter<T>> ActNorm<T>::parameters() {
  return {{"scale", scale_}, {"bias", bias_}};
}

template <typename T>
void ActNorm<T>::randomize(Rng& rng, double scale) {
  Tensor<T>& s = scale_.mutable_value();
  Tensor<T>& b = bias_.mutable_value();
  for (std::size_t k = 0; k < channels_; ++k) {
    s[k] = static_cast<T>(std::exp(scale * rng.normal()));
    b[k] = static_cast<T>(scale * rng.normal());
  }
  initialized_ = true;
}

template <typename T>
void ActNorm<T>::set_parameters(const Tensor<T>& scale, const Tensor<T>& bias) {
  require(scale.shape() == scale_.shape() && bias.shape() == bias_.shape(), ErrorCode::kDimension,
          "ActNorm parameter shape mismatch");
  scale_.mutable_value() = scale;
  bias_.mutable_value() = bias;
  initialized_ = true;
}

// ---------------------------------------------------------------------------
// Invertible 1x1

template <typename T>
std::vector<T> random_rotation(std::size_t n, Rng& rng) {
  std::vector<double> q(n * n);
  for (auto& v : q) v = rng.normal();
  // Gram-Schmidt over rows.
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t p = 0; p < r; ++p) {
      double dot = 0;
      for (std::size_t k = 0; k < n; ++k) dot += q[r * n + k] * q[p * n + k];
      for (std::size_t k = 0; k < n; ++k) q[r * n + k] -= dot * q[p * n + k];
    }
    double norm = 0;
    for (std::size_t k = 0; k < n; ++k) norm += q[r * n + k] * q[r * n + k];
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < n; ++k) q[r * n + k] /= norm;
  }
  return std::vector<T>(q.begin(), q.end());
}

template <typename T>
Invertible1x1<T>::Invertible1x1(std::size_t channels, Rng& rng)
    : Invertible1x1(channels, random_rotation<T>(channels, rng)) {}

template <typename T>
Invertible1x1<T>::Invertible1x1(std::size_t channels, const std::vector<T>& matrix) : channels_(channels) {
  require(matrix.size() == channels * channels, ErrorCode::kDimension, "1x1 convolution matrix must be c x c");
  weight_ = ad::parameter(Tensor<T>(Shape{1, 1, channels, channels}, matrix));
}

template <typename T>
FlowResult<T> Invertible1x1<T>::forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>*) {
  // log_abs_det raises kInvertibility for |det W| < 1e-12.
  auto logdet = ad::log_abs_det(tape, weight_);
  auto y = ad::channel_matmul(tape, x, weight_);
  const auto hw = static_cast<T>(x.shape().h() * x.shape().w());
  return {y, per_item_logdet(tape, ad::mul_scalar(tape, logdet, hw), x.shape().n())};
}

template <typename T>
Tensor<T> Invertible1x1<T>::inverse(const Tensor<T>& y, const Tensor<T>*) const {
  const std::size_t c = channels_;
  require(y.shape().c() == c, ErrorCode::kDimension, "1x1 inverse channel mismatch");
  std::vector<double> w(weight_.value().data().begin(), weight_.value().data().end());
  const auto inv = linalg::LuDecomposition<double>(w, c).inverse();
  Tensor<T> x(y.shape());
  const std::size_t rows = y.size() / c;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < c; ++i) {
      double acc = 0;
      for (std::size_t o = 0; o < c; ++o) acc += inv[i * c + o] * static_cast<double>(y[r * c + o]);
      x[r * c + i] = static_cast<T>(acc);
    }
  return x;
}

template <typename T>
void Invertible1x1<T>::randomize(Rng& rng, double scale) {
  auto q = random_rotation<T>(channels_, rng);
  Tensor<T>& w = weight_.mutable_value();
  for (std::size_t r = 0; r < channels_; ++r) {
    const T row_scale = static_cast<T>(std::exp(scale * rng.normal()));
    for (std::size_t k = 0; k < channels_; ++k) w[r * channels_ + k] = q[r * channels_ + k] * row_scale;
  }
}

// ---------------------------------------------------------------------------
// Coupling

template <typename T>
Coupling<T>::Coupling(std::size_t channels, std::size_t hidden, CouplingMode mode, Rng& rng,
                      std::size_t context_channels)
    : channels_(channels), kept_((channels + 1) / 2), context_channels_(context_channels), mode_(mode) {
  require(channels >= 2, ErrorCode::kDimension, "coupling needs at least 2 channels");
  require(hidden >= 1, ErrorCode::kValidation, "coupling needs at least one hidden channel");
  const std::size_t transformed = channels_ - kept_;
  const std::size_t out_channels = mode_ == CouplingMode::kAffine ? 2 * transformed : transformed;
  in_ = ConvParams<T>::random(3, 3, kept_ + context_channels_, hidden, rng, 0.05);
  mid_ = ConvParams<T>::random(1, 1, hidden, hidden, rng, 0.05);
  out_ = ConvParams<T>::zeros(3, 3, hidden, out_channels);
}

template <typename T>
typename Coupling<T>::NetOutput Coupling<T>::run_net(ad::Tape<T>& tape, const ad::Var<T>& xa,
                                                     const ad::Var<T>* context) const {
  ad::Var<T> input = xa;
  if (context_channels_ > 0) {
    require(context != nullptr && context->defined(), ErrorCode::kValidation, "conditional coupling needs a context");
    require(context->shape().c() == context_channels_, ErrorCode::kDimension, "coupling context channel mismatch");
    input = ad::concat_channels(tape, xa, *context);
  }
  auto h = ad::elu(tape, in_.apply(tape, input, nullptr, centered_anchor(3, 3)));
  h = ad::elu(tape, mid_.apply(tape, h, nullptr, centered_anchor(1, 1)));
  auto raw = out_.apply(tape, h, nullptr, centered_anchor(3, 3));
  const std::size_t transformed = channels_ - kept_;
  NetOutput out;
  if (mode_ == CouplingMode::kAffine) {
    auto pre = ad::add_scalar(tape, ad::slice_channels(tape, raw, 0, transformed), T(kScaleOffset));
    out.scale = ad::sigmoid(tape, pre);
    out.log_scale = ad::log_sigmoid(tape, pre);
    out.shift = ad::slice_channels(tape, raw, transformed, 2 * transformed);
  } else {
    out.shift = raw;
  }
  return out;
}

template <typename T>
FlowResult<T> Coupling<T>::forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>* context) {
  require(x.shape().c() == channels_, ErrorCode::kDimension,
          fmt::format("coupling expects {} channels, got {}", channels_, x.shape().c()));
  auto xa = ad::slice_channels(tape, x, 0, kept_);
  auto xb = ad::slice_channels(tape, x, kept_, channels_);
  auto net = run_net(tape, xa, context);
  ad::Var<T> yb;
  ad::Var<T> logdet;
  if (mode_ == CouplingMode::kAffine) {
    yb = ad::add(tape, ad::mul(tape, net.scale, xb), net.shift);
    logdet = ad::sum(tape, net.log_scale, ad::Axes::per_item());
  } else {
    yb = ad::add(tape, xb, net.shift);
    logdet = zero_logdet<T>(x.shape().n());
  }
  return {ad::concat_channels(tape, xa, yb), logdet};
}

template <typename T>
Tensor<T> Coupling<T>::inverse(const Tensor<T>& y, const Tensor<T>* context) const {
  require(y.shape().c() == channels_, ErrorCode::kDimension, "coupling inverse channel mismatch");
  ad::Tape<T> scratch(ad::Recording::kOff);
  auto ya = macow::slice_channels(y, 0, kept_);
  auto yb = macow::slice_channels(y, kept_, channels_);
  ad::Var<T> ctx;
  if (context != nullptr) ctx = ad::constant(*context);
  auto net = run_net(scratch, ad::constant(ya), context != nullptr ? &ctx : nullptr);
  const Tensor<T>& shift = net.shift.value();
  Tensor<T> xb(yb.shape());
  if (mode_ == CouplingMode::kAffine) {
    const Tensor<T>& s = net.scale.value();
    for (std::size_t i = 0; i < xb.size(); ++i) {
      require(s[i] > T(0), ErrorCode::kInvertibility, "coupling scale underflowed to zero");
      xb[i] = (yb[i] - shift[i]) / s[i];
    }
  } else {
    for (std::size_t i = 0; i < xb.size(); ++i) xb[i] = yb[i] - shift[i];
  }
  return macow::concat_channels(ya, xb);
}

template <typename T>
std::vector<NamedParameter<T>> Coupling<T>::parameters() {
  std::vector<NamedParameter<T>> out;
  in_.append_to(out, "net_in/");
  mid_.append_to(out, "net_mid/");
  out_.append_to(out, "net_out/");
  return out;
}

template <typename T>
void Coupling<T>::randomize(Rng& rng, double scale) {
  in_.randomize(rng, scale);
  mid_.randomize(rng, scale);
  out_.randomize(rng, scale);
}

// ---------------------------------------------------------------------------
// Squeeze / Unsqueeze

template <typename T>
Shape Squeeze<T>::output_shape(const Shape& in) const {
  require(in.h() % 2 == 0 && in.w() % 2 == 0, ErrorCode::kDimension, "squeeze needs even spatial extents");
  return Shape{in.n(), in.h() / 2, in.w() / 2, in.c() * 4};
}

template <typename T>
FlowResult<T> Squeeze<T>::forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>*) {
  return {ad::squeeze2x2(tape, x), zero_logdet<T>(x.shape().n())};
}

template <typename T>
Tensor<T> Squeeze<T>::inverse(const Tensor<T>& y, const Tensor<T>*) const {
  return unsqueeze2x2(y);
}

template <typename T>
Shape Unsqueeze<T>::output_shape(const Shape& in) const {
  require(in.c() % 4 == 0, ErrorCode::kDimension, "unsqueeze needs channels divisible by 4");
  return Shape{in.n(), in.h() * 2, in.w() * 2, in.c() / 4};
}

template <typename T>
FlowResult<T> Unsqueeze<T>::forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>*) {
  return {ad::unsqueeze2x2(tape, x), zero_logdet<T>(x.shape().n())};
}

template <typename T>
Tensor<T> Unsqueeze<T>::inverse(const Tensor<T>& y, const Tensor<T>*) const {
  return squeeze2x2(y);
}

// ---------------------------------------------------------------------------
// Sequential

template <typename T>
Sequential<T>::Sequential(LayerKind kind, std::vector<std::unique_ptr<FlowLayer<T>>> layers,
                          std::vector<std::string> names)
    : kind_(kind), layers_(std::move(layers)), names_(std::move(names)) {
  require(layers_.size() == names_.size(), ErrorCode::kValidation, "sequential layer/name count mismatch");
}

template <typename T>
Shape Sequential<T>::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

template <typename T>
FlowResult<T> Sequential<T>::forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>* context) {
  ad::Var<T> h = x;
  ad::Var<T> logdet = zero_logdet<T>(x.shape().n());
  for (auto& l : layers_) {
    auto r = l->forward(tape, h, context);
    h = r.y;
    logdet = ad::add(tape, logdet, r.logdet);
  }
  return {h, logdet};
}

template <typename T>
Tensor<T> Sequential<T>::inverse(const Tensor<T>& y, const Tensor<T>* context) const {
  Tensor<T> x = y;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) x = (*it)->inverse(x, context);
  return x;
}

template <typename T>
std::vector<NamedParameter<T>> Sequential<T>::parameters() {
  std::vector<NamedParameter<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    for (auto& p : layers_[i]->parameters()) out.push_back({names_[i] + "/" + p.name, p.var});
  return out;
}

template <typename T>
std::vector<NamedFlag> Sequential<T>::flags() {
  std::vector<NamedFlag> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    for (auto& f : layers_[i]->flags()) out.push_back({names_[i] + "/" + f.name, f.value});
  return out;
}

template <typename T>
void Sequential<T>::randomize(Rng& rng, double scale) {
  for (auto& l : layers_) l->randomize(rng, scale);
}

// ---------------------------------------------------------------------------
// SplitPrior

template <typename T>
SplitPrior<T>::SplitPrior(std::size_t channels, std::size_t emitted)
    : channels_(channels), emitted_(emitted), net_(ConvParams<T>::zeros(3, 3, channels - emitted, 2 * emitted)) {
  require(emitted >= 1 && emitted < channels, ErrorCode::kDimension,
          fmt::format("split of {} channels out of {} leaves nothing on one side", emitted, channels));
}

template <typename T>
typename SplitPrior<T>::Result SplitPrior<T>::forward(ad::Tape<T>& tape, const ad::Var<T>& x) const {
  require(x.shape().c() == channels_, ErrorCode::kDimension,
          fmt::format("split expects {} channels, got {}", channels_, x.shape().c()));
  const std::size_t keep = kept_channels();
  auto kept = ad::slice_channels(tape, x, 0, keep);
  auto z = ad::slice_channels(tape, x, keep, channels_);
  auto stats = net_.apply(tape, kept, nullptr, centered_anchor(3, 3));
  auto mu = ad::slice_channels(tape, stats, 0, emitted_);
  auto log_std = ad::slice_channels(tape, stats, emitted_, 2 * emitted_);
  auto logp = ad::sum(tape, ad::gaussian_log_density(tape, z, mu, log_std), ad::Axes::per_item());
  return {kept, z, logp};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> SplitPrior<T>::prior_parameters(const Tensor<T>& kept) const {
  ad::Tape<T> scratch(ad::Recording::kOff);
  auto stats = net_.apply(scratch, ad::constant(kept), nullptr, centered_anchor(3, 3));
  return {macow::slice_channels(stats.value(), 0, emitted_),
          macow::slice_channels(stats.value(), emitted_, 2 * emitted_)};
}

template <typename T>
Tensor<T> SplitPrior<T>::inverse(const Tensor<T>& kept, const Tensor<T>& z) const {
  require(kept.shape().c() == kept_channels() && z.shape().c() == emitted_, ErrorCode::kDimension,
          "split inverse channel mismatch");
  return macow::concat_channels(kept, z);
}

template <typename T>
Tensor<T> SplitPrior<T>::sample(const Tensor<T>& kept, double temperature, Rng& rng) const {
  require(temperature >= 0.0, ErrorCode::kValidation, "temperature must be non-negative");
  auto [mu, log_std] = prior_parameters(kept);
  Tensor<T> z(mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double eps = rng.normal();
    z[i] = static_cast<T>(static_cast<double>(mu[i]) +
                          temperature * std::exp(static_cast<double>(log_std[i])) * eps);
  }
  return z;
}

template <typename T>
std::vector<NamedParameter<T>> SplitPrior<T>::parameters() const {
  std::vector<NamedParameter<T>> out;
  net_.append_to(out, "prior/");
  return out;
}

template <typename T>
void SplitPrior<T>::randomize(Rng& rng, double scale) {
  net_.randomize(rng, scale);
}

// ---------------------------------------------------------------------------
// GaussianPrior

template <typename T>
GaussianPrior<T>::GaussianPrior(std::size_t channels)
    : channels_(channels),
      mean_(ad::parameter(Tensor<T>(Shape{1, 1, 1, channels}))),
      log_std_(ad::parameter(Tensor<T>(Shape{1, 1, 1, channels}))) {}

template <typename T>
ad::Var<T> GaussianPrior<T>::log_prob(ad::Tape<T>& tape, const ad::Var<T>& z) const {
  require(z.shape().c() == channels_, ErrorCode::kDimension, "prior channel mismatch");
  return ad::sum(tape, ad::gaussian_log_density(tape, z, mean_, log_std_), ad::Axes::per_item());
}

template <typename T>
Tensor<T> GaussianPrior<T>::sample(const Shape& shape, double temperature, Rng& rng) const {
  require(temperature >= 0.0, ErrorCode::kValidation, "temperature must be non-negative");
  require(shape.c() == channels_, ErrorCode::kDimension, "prior channel mismatch");
  Tensor<T> z(shape);
  const Tensor<T>& mu = mean_.value();
  const Tensor<T>& ls = log_std_.value();
  for (std::size_t i = 0; i < z.size(); ++i) {
    const std::size_t k = i % channels_;
    const double eps = rng.normal();
    z[i] = static_cast<T>(static_cast<double>(mu[k]) + temperature * std::exp(static_cast<double>(ls[k])) * eps);
  }
  return z;
}

template <typename T>
void GaussianPrior<T>::randomize(Rng& rng, double scale) {
  mean_.mutable_value() = normal_tensor<T>(mean_.shape(), rng, scale);
  log_std_.mutable_value() = normal_tensor<T>(log_std_.shape(), rng, scale);
}

#define MACOW_INSTANTIATE(T)                                  \
  template struct ConvParams<T>;                              \
  template class ActNorm<T>;                                  \
  template class Invertible1x1<T>;                            \
  template class Coupling<T>;                                 \
  template class Squeeze<T>;                                  \
  template class Unsqueeze<T>;                                \
  template class Sequential<T>;                               \
  template class SplitPrior<T>;                               \
  template class GaussianPrior<T>;                            \
  template std::vector<T> random_rotation(std::size_t, Rng&);

MACOW_INSTANTIATE(float)
MACOW_INSTANTIATE(double)

}  // namespace macow
