#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "macow/autodiff.hpp"
#include "macow/rng.hpp"
#include "macow/tensor.hpp"

namespace macow {

template <typename T>
struct NamedParameter {
  std::string name;
  ad::Var<T> var;
};

/// Persistent non-parameter state (ActNorm's initialized bit).
struct NamedFlag {
  std::string name;
  bool* value;
};

template <typename T>
struct FlowResult {
  ad::Var<T> y;
  ad::Var<T> logdet;  // [n,1,1,1], nats
};

enum class LayerKind {
  kActNorm,
  kInvertible1x1,
  kAffineCoupling,
  kAdditiveCoupling,
  kSqueeze,
  kUnsqueeze,
  kMaskedConvTop,
  kMaskedConvBottom,
  kMaskedConvLeft,
  kMaskedConvRight,
  kMcfUnit,
  kCount,
};

std::string_view to_string(LayerKind kind);

/// Invertible map with a tractable log-determinant.
///
/// forward() runs through the tape so it can be differentiated; inverse() is a
/// plain tensor computation. Conditional layers read an optional context
/// tensor; unconditional ones ignore it.
template <typename T>
class FlowLayer {
 public:
  virtual ~FlowLayer() = default;

  virtual LayerKind kind() const = 0;
  virtual Shape output_shape(const Shape& in) const { return in; }
  virtual FlowResult<T> forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>* context = nullptr) = 0;
  virtual Tensor<T> inverse(const Tensor<T>& y, const Tensor<T>* context = nullptr) const = 0;
  virtual std::vector<NamedParameter<T>> parameters() { return {}; }
  virtual std::vector<NamedFlag> flags() { return {}; }
  /// Replaces every parameter (including zero-initialized ones) with a random
  /// well-conditioned value; used by the verification suites.
  virtual void randomize(Rng& rng, double scale) = 0;
};

/// Zero log-determinant for a batch of n.
template <typename T>
ad::Var<T> zero_logdet(std::size_t n) {
  return ad::constant(Tensor<T>(Shape{n, 1, 1, 1}));
}

/// Broadcasts a [1,1,1,1] log-det onto every batch element.
template <typename T>
ad::Var<T> per_item_logdet(ad::Tape<T>& tape, const ad::Var<T>& scalar, std::size_t n) {
  return ad::add(tape, zero_logdet<T>(n), scalar);
}

/// One convolution with weight [kh,kw,cin,cout] and bias [1,1,1,cout].
template <typename T>
struct ConvParams {
  ad::Var<T> weight;
  ad::Var<T> bias;

  static ConvParams zeros(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout, bool with_bias = true);
  static ConvParams random(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout, Rng& rng,
                           double stddev);
  /// Weight stddev is divided by sqrt(fan-in); bias uses stddev as is.
  void randomize(Rng& rng, double stddev);
  ad::Var<T> apply(ad::Tape<T>& tape, const ad::Var<T>& x, std::shared_ptr<const Tensor<T>> mask,
                   Anchor anchor) const;
  void append_to(std::vector<NamedParameter<T>>& out, const std::string& prefix) const;
};

/// Per-channel y = s * x + b with data-dependent initialization.
template <typename T>
class ActNorm final : public FlowLayer<T> {
 public:
  /// With data_init, the first forward() sets s and b so the batch comes out
  /// with zero mean and unit variance per channel.
  explicit ActNorm(std::size_t channels, bool data_init = true);

  LayerKind kind() const override { return LayerKind::kActNorm; }
  FlowResult<T> forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>* context = nullptr) override;
  Tensor<T> inverse(const Tensor<T>& y, const Tensor<T>* context = nullptr) const override;
  std::vector<NamedParameter<T>> parameters() override;
  std::vector<NamedFlag> flags() override { return {{"initialized", &initialized_}}; }
  void randomize(Rng& rng, double scale) override;

  bool initialized() const { return initialized_; }
  void set_parameters(const Tensor<T>& scale, const Tensor<T>& bias);
  const Tensor<T>& scale() const { return scale_.value(); }
  const Tensor<T>& bias() const { return bias_.value(); }

  static constexpr double kStdFloor = 1e-6;

 private:
  void initialize_from(const Tensor<T>& x);
  void check_scale() const;

  std::size_t channels_;
  ad::Var<T> scale_;
  ad::Var<T> bias_;
  bool initialized_;
};

/// y_ij = W x_ij with W stored directly; log|det W| via LU at every use.
template <typename T>
class Invertible1x1 final : public FlowLayer<T> {
 public:
  /// Starts from a random rotation drawn from rng.
  Invertible1x1(std::size_t channels, Rng& rng);
  /// Starts from the given row-major c x c matrix.
  Invertible1x1(std::size_t channels, const std::vector<T>& matrix);

  LayerKind kind() const override { return LayerKind::kInvertible1x1; }
  FlowResult<T> forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>* context = nullptr) override;
  Tensor<T> inverse(const Tensor<T>& y, const Tensor<T>* context = nullptr) const override;
  std::vector<NamedParameter<T>> parameters() override { return {{"weight", weight_}}; }
  void randomize(Rng& rng, double scale) override;

  const Tensor<T>& weight() const { return weight_.value(); }

 private:
  std::size_t channels_;
  ad::Var<T> weight_;
};

enum class CouplingMode { kAffine, kAdditive };

/// x_a, x_b = split(x); y_b = s(x_a) * x_b + b(x_a) with s = sigmoid(raw + 2).
///
/// The s/b network is conv3x3 -> ELU -> conv1x1 -> ELU -> conv3x3, the last
/// convolution zero-initialized. x_a is the first ceil(c/2) channels. With
/// context channels, the context is concatenated to the network input.
template <typename T>
class Coupling final : public FlowLayer<T> {
 public:
  Coupling(std::size_t channels, std::size_t hidden, CouplingMode mode, Rng& rng, std::size_t context_channels = 0);

  LayerKind kind() const override {
    return mode_ == CouplingMode::kAffine ? LayerKind::kAffineCoupling : LayerKind::kAdditiveCoupling;
  }
  FlowResult<T> forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>* context = nullptr) override;
  Tensor<T> inverse(const Tensor<T>& y, const Tensor<T>* context = nullptr) const override;
  std::vector<NamedParameter<T>> parameters() override;
  void randomize(Rng& rng, double scale) override;

  CouplingMode mode() const { return mode_; }
  std::size_t kept_channels() const { return kept_; }

 private:
  struct NetOutput {
    ad::Var<T> log_scale;  // undefined in additive mode
    ad::Var<T> scale;
    ad::Var<T> shift;
  };
  NetOutput run_net(ad::Tape<T>& tape, const ad::Var<T>& xa, const ad::Var<T>* context) const;

  std::size_t channels_;
  std::size_t kept_;
  std::size_t context_channels_;
  CouplingMode mode_;
  ConvParams<T> in_;
  ConvParams<T> mid_;
  ConvParams<T> out_;
};

/// 2x2 space-to-channel reshape; volume preserving.
template <typename T>
class Squeeze final : public FlowLayer<T> {
 public:
  LayerKind kind() const override { return LayerKind::kSqueeze; }
  Shape output_shape(const Shape& in) const override;
  FlowResult<T> forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>* context = nullptr) override;
  Tensor<T> inverse(const Tensor<T>& y, const Tensor<T>* context = nullptr) const override;
  void randomize(Rng&, double) override {}
};

/// Unsqueeze as a flow layer (used to return to image layout).
template <typename T>
class Unsqueeze final : public FlowLayer<T> {
 public:
  LayerKind kind() const override { return LayerKind::kUnsqueeze; }
  Shape output_shape(const Shape& in) const override;
  FlowResult<T> forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>* context = nullptr) override;
  Tensor<T> inverse(const Tensor<T>& y, const Tensor<T>* context = nullptr) const override;
  void randomize(Rng&, double) override {}
};

/// Runs layers in order; log-determinants add.
template <typename T>
class Sequential final : public FlowLayer<T> {
 public:
  Sequential(LayerKind kind, std::vector<std::unique_ptr<FlowLayer<T>>> layers, std::vector<std::string> names);

  LayerKind kind() const override { return kind_; }
  Shape output_shape(const Shape& in) const override;
  FlowResult<T> forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>* context = nullptr) override;
  Tensor<T> inverse(const Tensor<T>& y, const Tensor<T>* context = nullptr) const override;
  std::vector<NamedParameter<T>> parameters() override;
  std::vector<NamedFlag> flags() override;
  void randomize(Rng& rng, double scale) override;

  std::size_t size() const { return layers_.size(); }
  FlowLayer<T>& layer(std::size_t i) { return *layers_[i]; }
  const FlowLayer<T>& layer(std::size_t i) const { return *layers_[i]; }
  const std::string& layer_name(std::size_t i) const { return names_[i]; }

 private:
  LayerKind kind_;
  std::vector<std::unique_ptr<FlowLayer<T>>> layers_;
  std::vector<std::string> names_;
};

/// Factors out the last `emitted` channels under a conditional Gaussian whose
/// mean and log-std come from a zero-initialized 3x3 convolution of the kept
/// channels.
template <typename T>
class SplitPrior {
 public:
  SplitPrior(std::size_t channels, std::size_t emitted);

  struct Result {
    ad::Var<T> kept;
    ad::Var<T> z;
    ad::Var<T> log_prob;  // [n,1,1,1]
  };

  Result forward(ad::Tape<T>& tape, const ad::Var<T>& x) const;
  /// Re-attaches a recorded z.
  Tensor<T> inverse(const Tensor<T>& kept, const Tensor<T>& z) const;
  /// Draws z ~ N(mu, (temperature * sigma)^2).
  Tensor<T> sample(const Tensor<T>& kept, double temperature, Rng& rng) const;
  /// (mean, log_std) for the emitted channels given the kept ones.
  std::pair<Tensor<T>, Tensor<T>> prior_parameters(const Tensor<T>& kept) const;

  std::vector<NamedParameter<T>> parameters() const;
  void randomize(Rng& rng, double scale);

  std::size_t channels() const { return channels_; }
  std::size_t emitted() const { return emitted_; }
  std::size_t kept_channels() const { return channels_ - emitted_; }

 private:
  std::size_t channels_;
  std::size_t emitted_;
  ConvParams<T> net_;
};

/// Per-channel learned Gaussian over the final latent: N(mean_c, exp(log_std_c)^2),
/// zero-initialized to a standard normal.
template <typename T>
class GaussianPrior {
 public:
  explicit GaussianPrior(std::size_t channels);

  ad::Var<T> log_prob(ad::Tape<T>& tape, const ad::Var<T>& z) const;  // [n,1,1,1]
  Tensor<T> sample(const Shape& shape, double temperature, Rng& rng) const;
  std::vector<NamedParameter<T>> parameters() const { return {{"mean", mean_}, {"log_std", log_std_}}; }
  void randomize(Rng& rng, double scale);

 private:
  std::size_t channels_;
  ad::Var<T> mean_;
  ad::Var<T> log_std_;
};

/// Random well-conditioned rotation (Gram-Schmidt of a Gaussian matrix).
template <typename T>
std::vector<T> random_rotation(std::size_t n, Rng& rng);

}  // namespace macow
