#include "macow/model.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace macow {

std::vector<PlanEntry> build_original_plan(const ModelConfig& cfg) {
  std::vector<PlanEntry> plan;
  std::size_t h = cfg.height, w = cfg.width, c = cfg.channels;
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    require(cfg.depths[l].size() == 1, ErrorCode::kConfig,
            fmt::format("original layout: level {} must be a single block", l));
    plan.push_back({PlanEntry::Op::kSqueeze, l, h, w, c, 0});
    h /= 2;
    w /= 2;
    c *= 4;
    for (std::size_t s = 0; s < cfg.depths[l][0]; ++s) plan.push_back({PlanEntry::Op::kStep, l, h, w, c, 0});
    if (l + 1 < cfg.levels()) {
      plan.push_back({PlanEntry::Op::kSplit, l, h, w, c, c / 2});
      c -= c / 2;
    }
  }
  return plan;
}

std::vector<PlanEntry> build_fine_grained_plan(const ModelConfig& cfg, std::size_t m) {
  require(m >= 2, ErrorCode::kConfig, "split factor must be at least 2");
  std::vector<PlanEntry> plan;
  std::size_t h = cfg.height, w = cfg.width, c = cfg.channels;
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    const bool last_level = l + 1 == cfg.levels();
    plan.push_back({PlanEntry::Op::kSqueeze, l, h, w, c, 0});
    h /= 2;
    w /= 2;
    c *= 4;
    const std::size_t part = c / m;
    require(part >= 1 && c % m == 0, ErrorCode::kConfig,
            fmt::format("level {}: {} channels do not split into {} parts", l, c, m));
    const auto& blocks = cfg.depths[l];
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      for (std::size_t s = 0; s < blocks[b]; ++s) plan.push_back({PlanEntry::Op::kStep, l, h, w, c, 0});
      if (last_level && b + 1 == blocks.size()) break;
      require(part < c, ErrorCode::kConfig, fmt::format("level {} runs out of channels", l));
      plan.push_back({PlanEntry::Op::kSplit, l, h, w, c, part});
      c -= part;
    }
  }
  return plan;
}

std::vector<PlanEntry> build_plan(const ModelConfig& cfg) {
  cfg.validate();
  return cfg.multiscale == MultiScale::kOriginal ? build_original_plan(cfg)
                                                 : build_fine_grained_plan(cfg, cfg.split_factor());
}

template <typename T>
std::size_t LatentBundle<T>::dims_per_item() const {
  std::size_t d = 0;
  for (const auto& t : z) d += t.shape().per_item();
  return d;
}

template <typename T>
std::unique_ptr<Sequential<T>> make_step(std::size_t channels, const ModelConfig& cfg, Rng& rng) {
  std::vector<std::unique_ptr<FlowLayer<T>>> layers;
  std::vector<std::string> names;
  for (std::size_t u = 0; u < cfg.units_per_step; ++u) {
    const bool vertical = u % 2 == 0;
    layers.push_back(make_mcf_unit<T>(channels, cfg.kernel_h, cfg.kernel_w,
                                      vertical ? Orientation::kTop : Orientation::kLeft,
                                      vertical ? Orientation::kBottom : Orientation::kRight));
    names.push_back(fmt::format("unit{}", u));
  }
  layers.push_back(std::make_unique<ActNorm<T>>(channels));
  names.push_back("actnorm");
  layers.push_back(std::make_unique<Invertible1x1<T>>(channels, rng));
  names.push_back("inv1x1");
  layers.push_back(std::make_unique<Coupling<T>>(channels, cfg.hidden_channels, cfg.coupling, rng));
  names.push_back("coupling");
  return std::make_unique<Sequential<T>>(LayerKind::kMcfUnit, std::move(layers), std::move(names));
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, Rng& init_rng) : cfg_(cfg), plan_(build_plan(cfg)) {
  std::size_t block = 0, step = 0, prev_level = 0, c = cfg.channels;
  Shape shape{1, cfg.height, cfg.width, cfg.channels};
  for (const auto& e : plan_) {
    if (e.level != prev_level) {
      block = 0;
      step = 0;
      prev_level = e.level;
    }
    Stage stage;
    switch (e.op) {
      case PlanEntry::Op::kSqueeze:
        stage.name = fmt::format("L{}/squeeze", e.level);
        stage.layer = std::make_unique<Squeeze<T>>();
        shape = stage.layer->output_shape(shape);
        c = shape.c();
        break;
      case PlanEntry::Op::kStep:
        stage.name = fmt::format("L{}/B{}/S{}", e.level, block, step++);
        stage.layer = make_step<T>(c, cfg_, init_rng);
        break;
      case PlanEntry::Op::kSplit:
        stage.name = fmt::format("L{}/B{}/split", e.level, block++);
        step = 0;
        stage.split = std::make_unique<SplitPrior<T>>(c, e.emitted);
        c -= e.emitted;
        shape = Shape{1, shape.h(), shape.w(), c};
        break;
    }
    stage.leaf_begin = leaves_.size();
    if (stage.layer) add_leaves(*stage.layer, stage.name);
    stage.leaf_end = leaves_.size();
    stages_.push_back(std::move(stage));
  }
  final_shape_ = shape;
  prior_ = std::make_unique<GaussianPrior<T>>(c);
}

template <typename T>
void Model<T>::add_leaves(FlowLayer<T>& layer, const std::string& prefix) {
  if (auto* seq = dynamic_cast<Sequential<T>*>(&layer)) {
    for (std::size_t i = 0; i < seq->size(); ++i) add_leaves(seq->layer(i), prefix + "/" + seq->layer_name(i));
    return;
  }
  leaves_.push_back({prefix, &layer});
}

template <typename T>
EncodeResult<T> Model<T>::encode(ad::Tape<T>& tape, const ad::Var<T>& x, std::vector<LayerTrace<T>>* trace) {
  require(x.shape().h() == cfg_.height && x.shape().w() == cfg_.width && x.shape().c() == cfg_.channels,
          ErrorCode::kDimension,
          fmt::format("model expects [n,{},{},{}], got {}", cfg_.height, cfg_.width, cfg_.channels,
                      to_string(x.shape())));
  const std::size_t n = x.shape().n();
  EncodeResult<T> out;
  out.logdet = zero_logdet<T>(n);
  out.latent_log_prob = zero_logdet<T>(n);
  ad::Var<T> h = x;
  for (auto& stage : stages_) {
    if (stage.split) {
      auto r = stage.split->forward(tape, h);
      out.z.push_back(r.z);
      out.latent_log_prob = ad::add(tape, out.latent_log_prob, r.log_prob);
      h = r.kept;
      continue;
    }
    for (std::size_t i = stage.leaf_begin; i < stage.leaf_end; ++i) {
      auto r = leaves_[i].layer->forward(tape, h);
      if (trace) trace->push_back({leaves_[i].name, leaves_[i].layer->kind(), r.logdet.value()});
      out.logdet = ad::add(tape, out.logdet, r.logdet);
      h = r.y;
    }
  }
  out.z.push_back(h);
  out.latent_log_prob = ad::add(tape, out.latent_log_prob, prior_->log_prob(tape, h));
  return out;
}

template <typename T>
std::pair<LatentBundle<T>, Tensor<T>> Model<T>::encode(const Tensor<T>& x) {
  ad::Tape<T> tape(ad::Recording::kOff);
  auto r = encode(tape, ad::constant(x));
  LatentBundle<T> zs;
  for (const auto& z : r.z) zs.z.push_back(z.value());
  return {std::move(zs), r.logdet.value()};
}

template <typename T>
Tensor<T> Model<T>::decode(const LatentBundle<T>& zs) const {
  std::size_t splits = 0;
  for (const auto& s : stages_) splits += s.split ? 1 : 0;
  require(zs.z.size() == splits + 1, ErrorCode::kDimension,
          fmt::format("decode expects {} latents, got {}", splits + 1, zs.z.size()));
  Tensor<T> h = zs.z.back();
  require(h.shape().h() == final_shape_.h() && h.shape().w() == final_shape_.w() &&
              h.shape().c() == final_shape_.c(),
          ErrorCode::kDimension, fmt::format("final latent has shape {}", to_string(h.shape())));
  std::size_t zi = splits;
  for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
    if (it->split) {
      h = it->split->inverse(h, zs.z[--zi]);
      continue;
    }
    for (std::size_t i = it->leaf_end; i > it->leaf_begin; --i) h = leaves_[i - 1].layer->inverse(h);
  }
  return h;
}

template <typename T>
double Model<T>::data_log_jacobian() const {
  return -static_cast<double>(cfg_.dims()) * cfg_.n_bits * std::numbers::ln2;
}

template <typename T>
Tensor<T> Model<T>::to_flow(const Tensor<T>& y) const {
  const double scale = std::ldexp(1.0, -static_cast<int>(cfg_.n_bits));
  Tensor<T> v(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) v[i] = static_cast<T>(y[i] * scale - 0.5);
  return v;
}

template <typename T>
Tensor<T> Model<T>::from_flow(const Tensor<T>& v) const {
  const double scale = std::ldexp(1.0, static_cast<int>(cfg_.n_bits));
  Tensor<T> y(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) y[i] = static_cast<T>((v[i] + 0.5) * scale);
  return y;
}

template <typename T>
ad::Var<T> Model<T>::log_prob(ad::Tape<T>& tape, const ad::Var<T>& y) {
  const T scale = static_cast<T>(std::ldexp(1.0, -static_cast<int>(cfg_.n_bits)));
  auto v = ad::add_scalar(tape, ad::mul_scalar(tape, y, scale), T(-0.5));
  auto r = encode(tape, v);
  auto lp = ad::add(tape, r.logdet, r.latent_log_prob);
  return ad::add_scalar(tape, lp, static_cast<T>(data_log_jacobian()));
}

template <typename T>
Tensor<T> Model<T>::log_prob(const Tensor<T>& y) {
  ad::Tape<T> tape(ad::Recording::kOff);
  return log_prob(tape, ad::constant(y)).value();
}

template <typename T>
Tensor<T> Model<T>::sample(std::size_t n, double temperature, Rng& rng) const {
  require(temperature >= 0, ErrorCode::kValidation, "temperature must be non-negative");
  Tensor<T> h = prior_->sample(Shape{n, final_shape_.h(), final_shape_.w(), final_shape_.c()}, temperature, rng);
  for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
    if (it->split) {
      h = it->split->inverse(h, it->split->sample(h, temperature, rng));
      continue;
    }
    for (std::size_t i = it->leaf_end; i > it->leaf_begin; --i) h = leaves_[i - 1].layer->inverse(h);
  }
  return from_flow(h);
}

template <typename T>
std::vector<NamedParameter<T>> Model<T>::parameters() {
  std::vector<NamedParameter<T>> out;
  for (auto& stage : stages_) {
    if (stage.split) {
      for (auto& p : stage.split->parameters()) out.push_back({stage.name + "/" + p.name, p.var});
      continue;
    }
    for (std::size_t i = stage.leaf_begin; i < stage.leaf_end; ++i)
      for (auto& p : leaves_[i].layer->parameters()) out.push_back({leaves_[i].name + "/" + p.name, p.var});
  }
  for (auto& p : prior_->parameters()) out.push_back({"prior/" + p.name, p.var});
  return out;
}

template <typename T>
std::vector<NamedFlag> Model<T>::flags() {
  std::vector<NamedFlag> out;
  for (auto& leaf : leaves_)
    for (auto& f : leaf.layer->flags()) out.push_back({leaf.name + "/" + f.name, f.value});
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.var.value().size();
  return total;
}

template <typename T>
void Model<T>::randomize(Rng& rng, double scale) {
  for (auto& stage : stages_) {
    if (stage.split) stage.split->randomize(rng, scale);
    for (std::size_t i = stage.leaf_begin; i < stage.leaf_end; ++i) leaves_[i].layer->randomize(rng, scale);
  }
  prior_->randomize(rng, scale);
}

#define MACOW_INSTANTIATE(T)                                                                          \
  template struct LatentBundle<T>;                                                                    \
  template class Model<T>;                                                                            \
  template std::unique_ptr<Sequential<T>> make_step<T>(std::size_t, const ModelConfig&, Rng&);
MACOW_INSTANTIATE(float)
MACOW_INSTANTIATE(double)
#undef MACOW_INSTANTIATE

}  // namespace macow
