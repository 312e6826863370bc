#include "macow/masked_conv.hpp"

#include <fmt/format.h>

namespace macow {

std::string_view to_string(Orientation o) {
  switch (o) {
    case Orientation::kTop: return "top";
    case Orientation::kBottom: return "bottom";
    case Orientation::kLeft: return "left";
    case Orientation::kRight: return "right";
  }
  return "unknown";
}

LayerKind layer_kind(Orientation o) {
  switch (o) {
    case Orientation::kTop: return LayerKind::kMaskedConvTop;
    case Orientation::kBottom: return LayerKind::kMaskedConvBottom;
    case Orientation::kLeft: return LayerKind::kMaskedConvLeft;
    case Orientation::kRight: return LayerKind::kMaskedConvRight;
  }
  return LayerKind::kCount;
}

bool is_vertical(Orientation o) { return o == Orientation::kTop || o == Orientation::kBottom; }

MaskSpec MaskSpec::make(Orientation o, std::size_t kh, std::size_t kw) {
  require(kh >= 1 && kw >= 1, ErrorCode::kValidation, "mask kernel extents must be positive");
  MaskSpec spec;
  spec.orientation = o;
  if (is_vertical(o)) {
    spec.kh = kh;
    spec.kw = kw;
  } else {
    spec.kh = kw;
    spec.kw = kh;
  }
  switch (o) {
    case Orientation::kTop: spec.anchor = {spec.kh - 1, spec.kw / 2}; break;
    case Orientation::kBottom: spec.anchor = {0, spec.kw - 1 - spec.kw / 2}; break;
    case Orientation::kLeft: spec.anchor = {spec.kh / 2, spec.kw - 1}; break;
    case Orientation::kRight: spec.anchor = {spec.kh - 1 - spec.kh / 2, 0}; break;
  }
  return spec;
}

template <typename T>
Tensor<T> build_mask(const MaskSpec& spec) {
  require(spec.kh >= 1 && spec.kw >= 1, ErrorCode::kValidation, "mask kernel extents must be positive");
  require(spec.anchor.row < spec.kh && spec.anchor.col < spec.kw, ErrorCode::kValidation,
          fmt::format("mask anchor ({}, {}) outside {}x{} kernel", spec.anchor.row, spec.anchor.col, spec.kh, spec.kw));
  Tensor<T> mask(Shape{spec.kh, spec.kw, 1, 1}, T(1));
  for (std::size_t a = 0; a < spec.kh; ++a)
    for (std::size_t b = 0; b < spec.kw; ++b) {
      bool hidden = false;
      switch (spec.orientation) {
        case Orientation::kTop: hidden = a == spec.kh - 1; break;
        case Orientation::kBottom: hidden = a == 0; break;
        case Orientation::kLeft: hidden = b == spec.kw - 1; break;
        case Orientation::kRight: hidden = b == 0; break;
      }
      if (hidden) mask[a * spec.kw + b] = T(0);
    }
  require(mask[spec.anchor.row * spec.kw + spec.anchor.col] == T(0), ErrorCode::kValidation,
          "mask anchor must not see its own position");
  return mask;
}

template <typename T>
MaskedConvFlow<T>::MaskedConvFlow(std::size_t channels, MaskSpec spec, std::size_t context_channels)
    : channels_(channels),
      context_channels_(context_channels),
      spec_(spec),
      mask_(std::make_shared<const Tensor<T>>(build_mask<T>(spec))),
      scale_net_(ConvParams<T>::zeros(spec.kh, spec.kw, channels, channels)),
      shift_net_(ConvParams<T>::zeros(spec.kh, spec.kw, channels, channels)) {
  require(channels >= 1, ErrorCode::kDimension, "masked flow needs at least one channel");
  if (context_channels_ > 0) {
    context_scale_ = ConvParams<T>::zeros(1, 1, context_channels_, channels, false);
    context_shift_ = ConvParams<T>::zeros(1, 1, context_channels_, channels, false);
  }
}

template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> MaskedConvFlow<T>::context_terms(ad::Tape<T>& tape,
                                                                   const ad::Var<T>* context) const {
  if (context_channels_ == 0) return {};
  require(context != nullptr && context->defined(), ErrorCode::kValidation, "conditional masked flow needs a context");
  require(context->shape().c() == context_channels_, ErrorCode::kDimension, "masked flow context channel mismatch");
  return {context_scale_.apply(tape, *context, nullptr, Anchor{}),
          context_shift_.apply(tape, *context, nullptr, Anchor{})};
}

template <typename T>
FlowResult<T> MaskedConvFlow<T>::forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ad::Var<T>* context) {
  require(x.shape().c() == channels_, ErrorCode::kDimension,
          fmt::format("masked flow expects {} channels, got {}", channels_, x.shape().c()));
  auto raw_scale = scale_net_.apply(tape, x, mask_, spec_.anchor);
  auto shift = shift_net_.apply(tape, x, mask_, spec_.anchor);
  auto [ctx_scale, ctx_shift] = context_terms(tape, context);
  if (ctx_scale.defined()) {
    require(ctx_scale.shape().h() == x.shape().h() && ctx_scale.shape().w() == x.shape().w(), ErrorCode::kDimension,
            "masked flow context spatial mismatch");
    raw_scale = ad::add(tape, raw_scale, ctx_scale);
    shift = ad::add(tape, shift, ctx_shift);
  }
  auto pre = ad::add_scalar(tape, raw_scale, T(2));
  auto y = ad::add(tape, ad::mul(tape, ad::sigmoid(tape, pre), x), shift);
  auto logdet = ad::sum(tape, ad::log_sigmoid(tape, pre), ad::Axes::per_item());
  return {y, logdet};
}

template <typename T>
Tensor<T> MaskedConvFlow<T>::inverse(const Tensor<T>& y, const Tensor<T>* context) const {
  const Shape& ys = y.shape();
  require(ys.c() == channels_, ErrorCode::kDimension, "masked flow inverse channel mismatch");
  ad::Tape<T> scratch(ad::Recording::kOff);
  Tensor<T> ctx_scale, ctx_shift;
  if (context_channels_ > 0) {
    require(context != nullptr, ErrorCode::kValidation, "conditional masked flow needs a context");
    ad::Var<T> ctx = ad::constant(*context);
    auto terms = context_terms(scratch, &ctx);
    ctx_scale = terms.first.value();
    ctx_shift = terms.second.value();
  }

  const bool vertical = is_vertical(spec_.orientation);
  const bool forward_sweep = spec_.orientation == Orientation::kTop || spec_.orientation == Orientation::kLeft;
  const std::size_t steps = vertical ? ys.h() : ys.w();
  const std::size_t c = channels_;
  const Tensor<T>* sb = &scale_net_.bias.value();
  const Tensor<T>* bb = &shift_net_.bias.value();
  Tensor<T> x(ys);  // unrecovered entries are zero; the mask never reads them
  x.fill(T(0));

  for (std::size_t step = 0; step < steps; ++step) {
    const std::size_t line = forward_sweep ? step : steps - 1 - step;
    // Kernel-sized slab around the current row/column; outside the image stays zero.
    const std::size_t extent = vertical ? spec_.kh : spec_.kw;
    const auto offset = static_cast<std::ptrdiff_t>(line) -
                        static_cast<std::ptrdiff_t>(vertical ? spec_.anchor.row : spec_.anchor.col);
    Shape slab_shape = vertical ? Shape{ys.n(), extent, ys.w(), c} : Shape{ys.n(), ys.h(), extent, c};
    Tensor<T> slab(slab_shape);
    for (std::size_t n = 0; n < ys.n(); ++n)
      for (std::size_t s = 0; s < extent; ++s) {
        const std::ptrdiff_t src = offset + static_cast<std::ptrdiff_t>(s);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
        const auto u = static_cast<std::size_t>(src);
        const std::size_t across = vertical ? ys.w() : ys.h();
        for (std::size_t a = 0; a < across; ++a) {
          const T* from = vertical ? &x.at(n, u, a, 0) : &x.at(n, a, u, 0);
          T* to = vertical ? &slab.at(n, s, a, 0) : &slab.at(n, a, s, 0);
          for (std::size_t k = 0; k < c; ++k) to[k] = from[k];
        }
      }
    OutputWindow win = vertical ? OutputWindow{spec_.anchor.row, spec_.anchor.row + 1, 0, ys.w()}
                                : OutputWindow{0, ys.h(), spec_.anchor.col, spec_.anchor.col + 1};
    Tensor<T> raw_scale = conv2d_forward(slab, scale_net_.weight.value(), sb, mask_.get(), spec_.anchor, win);
    Tensor<T> shift = conv2d_forward(slab, shift_net_.weight.value(), bb, mask_.get(), spec_.anchor, win);
    ++conv_applications_;

    const std::size_t across = vertical ? ys.w() : ys.h();
    for (std::size_t n = 0; n < ys.n(); ++n)
      for (std::size_t a = 0; a < across; ++a) {
        const std::size_t i = vertical ? line : a;
        const std::size_t j = vertical ? a : line;
        T* rs = vertical ? &raw_scale.at(n, 0, a, 0) : &raw_scale.at(n, a, 0, 0);
        T* sh = vertical ? &shift.at(n, 0, a, 0) : &shift.at(n, a, 0, 0);
        if (!ctx_scale.empty())
          for (std::size_t k = 0; k < c; ++k) {
            rs[k] += ctx_scale.at(n, i, j, k);
            sh[k] += ctx_shift.at(n, i, j, k);
          }
      }
    auto scale = ad::sigmoid(scratch, ad::add_scalar(scratch, ad::constant(std::move(raw_scale)), T(2)));
    const Tensor<T>& s = scale.value();
    for (std::size_t n = 0; n < ys.n(); ++n)
      for (std::size_t a = 0; a < across; ++a) {
        const std::size_t i = vertical ? line : a;
        const std::size_t j = vertical ? a : line;
        const std::size_t o = vertical ? s.offset(n, 0, a, 0) : s.offset(n, a, 0, 0);
        for (std::size_t k = 0; k < c; ++k) {
          require(s[o + k] > T(0), ErrorCode::kInvertibility, "masked flow scale underflowed to zero");
          x.at(n, i, j, k) = (y.at(n, i, j, k) - shift[o + k]) / s[o + k];
        }
      }
  }
  return x;
}

template <typename T>
std::vector<NamedParameter<T>> MaskedConvFlow<T>::parameters() {
  std::vector<NamedParameter<T>> out;
  scale_net_.append_to(out, "scale/");
  shift_net_.append_to(out, "shift/");
  if (context_channels_ > 0) {
    context_scale_.append_to(out, "context_scale/");
    context_shift_.append_to(out, "context_shift/");
  }
  return out;
}

template <typename T>
void MaskedConvFlow<T>::randomize(Rng& rng, double scale) {
  scale_net_.randomize(rng, scale);
  shift_net_.randomize(rng, scale);
  if (context_channels_ > 0) {
    context_scale_.randomize(rng, scale);
    context_shift_.randomize(rng, scale);
  }
}

template <typename T>
std::unique_ptr<Sequential<T>> make_mcf_unit(std::size_t channels, std::size_t kh, std::size_t kw,
                                             Orientation first, Orientation second, std::size_t context_channels,
                                             bool actnorm_data_init) {
  require(first != second, ErrorCode::kValidation, "an MCF unit needs two different orientations");
  std::vector<std::unique_ptr<FlowLayer<T>>> layers;
  layers.push_back(std::make_unique<ActNorm<T>>(channels, actnorm_data_init));
  layers.push_back(std::make_unique<MaskedConvFlow<T>>(channels, MaskSpec::make(first, kh, kw), context_channels));
  layers.push_back(std::make_unique<MaskedConvFlow<T>>(channels, MaskSpec::make(second, kh, kw), context_channels));
  std::vector<std::string> names{"actnorm", fmt::format("mcf_{}", to_string(first)),
                                 fmt::format("mcf_{}", to_string(second))};
  return std::make_unique<Sequential<T>>(LayerKind::kMcfUnit, std::move(layers), std::move(names));
}

#define MACOW_INSTANTIATE(T)                                                                                      \
  template Tensor<T> build_mask(const MaskSpec&);                                                                  \
  template class MaskedConvFlow<T>;                                                                                \
  template std::unique_ptr<Sequential<T>> make_mcf_unit(std::size_t, std::size_t, std::size_t, Orientation,       \
                                                        Orientation, std::size_t, bool);

MACOW_INSTANTIATE(float)
MACOW_INSTANTIATE(double)

}  // namespace macow
