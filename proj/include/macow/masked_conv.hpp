#pragma once

#include <atomic>
#include <memory>
#include <utility>

#include "macow/flow_layers.hpp"

namespace macow {

enum class Orientation { kTop, kBottom, kLeft, kRight };

std::string_view to_string(Orientation o);
LayerKind layer_kind(Orientation o);
bool is_vertical(Orientation o);

/// Kernel extents, orientation and the kernel cell aligned with the output.
struct MaskSpec {
  std::size_t kh = 2;
  std::size_t kw = 5;
  Orientation orientation = Orientation::kTop;
  Anchor anchor{};

  /// Default anchor for the orientation. (kh, kw) is the vertical kernel; left
  /// and right use its transpose.
  static MaskSpec make(Orientation o, std::size_t kh = 2, std::size_t kw = 5);
};

/// 0/1 mask [kh,kw,1,1]. top: last row masked; bottom: first row; left: last
/// column; right: first column. The anchor must fall on a masked cell.
template <typename T>
Tensor<T> build_mask(const MaskSpec& spec);

/// y_t = s(x_ctx) * x_t + b(x_ctx), s = sigmoid(raw + 2), where the context of
/// t is the masked neighbourhood (never position t itself). s and b are each a
/// single masked convolution, zero-initialized.
///
/// With context channels, an unmasked 1x1 convolution of the context is added
/// to both raw outputs.
template <typename T>
class MaskedConvFlow final : public FlowLayer<T> {
 public:
  MaskedConvFlow(std::size_t channels, MaskSpec spec, std::size_t context_channels = 0);

  LayerKind kind() const override { return layer_kind(spec_.orientation); }
  FlowResult<T> forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>* context = nullptr) override;
  /// Sweeps rows (vertical masks) or columns (horizontal) in dependency order,
  /// convolving one kernel-sized slab per step.
  Tensor<T> inverse(const Tensor<T>& y, const Tensor<T>* context = nullptr) const override;
  std::vector<NamedParameter<T>> parameters() override;
  void randomize(Rng& rng, double scale) override;

  const MaskSpec& spec() const { return spec_; }
  const Tensor<T>& mask() const { return *mask_; }
  const ConvParams<T>& scale_net() const { return scale_net_; }
  const ConvParams<T>& shift_net() const { return shift_net_; }

  /// Slab convolutions performed by inverse() since the last reset.
  std::size_t conv_applications() const { return conv_applications_.load(); }
  void reset_conv_applications() { conv_applications_ = 0; }

 private:
  std::pair<ad::Var<T>, ad::Var<T>> context_terms(ad::Tape<T>& tape, const ad::Var<T>* context) const;

  std::size_t channels_;
  std::size_t context_channels_;
  MaskSpec spec_;
  std::shared_ptr<const Tensor<T>> mask_;
  ConvParams<T> scale_net_;
  ConvParams<T> shift_net_;
  ConvParams<T> context_scale_;
  ConvParams<T> context_shift_;
  mutable std::atomic<std::size_t> conv_applications_{0};
};

/// ActNorm followed by two masked flows with the given orientations.
template <typename T>
std::unique_ptr<Sequential<T>> make_mcf_unit(std::size_t channels, std::size_t kh, std::size_t kw,
                                             Orientation first, Orientation second,
                                             std::size_t context_channels = 0, bool actnorm_data_init = true);

}  // namespace macow
