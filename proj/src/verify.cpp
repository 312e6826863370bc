#include "macow/verify.hpp"

#include <cmath>
#include <set>

#include <fmt/format.h>

#include "macow/dequant.hpp"
#include "macow/gradcheck.hpp"
#include "macow/masked_conv.hpp"
#include "macow/model.hpp"
#include "macow/oracles.hpp"

namespace macow {

namespace {

using LayerPtr = std::unique_ptr<FlowLayer<double>>;

template <typename L>
LayerPtr randomized(std::unique_ptr<L> layer, Rng& rng, double scale) {
  layer->randomize(rng, scale);
  return layer;
}

CheckResult result(std::string name, bool ok, std::string detail) { return {std::move(name), ok, std::move(detail)}; }

double relative_gap(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

const std::vector<RegisteredLayer>& layer_registry() {
  static const std::vector<RegisteredLayer> registry = [] {
    std::vector<RegisteredLayer> r;
    r.push_back({"actnorm", LayerKind::kActNorm, Shape{1, 3, 3, 2}, 0,
                 [](Rng& rng) { return randomized(std::make_unique<ActNorm<double>>(2), rng, 0.5); }});
    r.push_back({"inv1x1", LayerKind::kInvertible1x1, Shape{1, 3, 3, 3}, 0,
                 [](Rng& rng) { return randomized(std::make_unique<Invertible1x1<double>>(3, rng), rng, 0.3); }});
    r.push_back({"coupling_affine", LayerKind::kAffineCoupling, Shape{1, 3, 3, 3}, 0, [](Rng& rng) {
                   return randomized(std::make_unique<Coupling<double>>(3, 4, CouplingMode::kAffine, rng), rng, 0.3);
                 }});
    r.push_back({"coupling_affine_context", LayerKind::kAffineCoupling, Shape{1, 3, 3, 2}, 2, [](Rng& rng) {
                   return randomized(std::make_unique<Coupling<double>>(2, 4, CouplingMode::kAffine, rng, 2), rng, 0.3);
                 }});
    r.push_back({"coupling_additive", LayerKind::kAdditiveCoupling, Shape{1, 3, 3, 2}, 0, [](Rng& rng) {
                   return randomized(std::make_unique<Coupling<double>>(2, 4, CouplingMode::kAdditive, rng), rng, 0.3);
                 }});
    r.push_back({"squeeze", LayerKind::kSqueeze, Shape{1, 4, 4, 2}, 0,
                 [](Rng&) { return LayerPtr(std::make_unique<Squeeze<double>>()); }});
    r.push_back({"unsqueeze", LayerKind::kUnsqueeze, Shape{1, 2, 2, 8}, 0,
                 [](Rng&) { return LayerPtr(std::make_unique<Unsqueeze<double>>()); }});
    for (auto o : {Orientation::kTop, Orientation::kBottom, Orientation::kLeft, Orientation::kRight}) {
      r.push_back({fmt::format("mcf_{}", to_string(o)), layer_kind(o), Shape{1, 4, 4, 2}, 0, [o](Rng& rng) {
                     return randomized(std::make_unique<MaskedConvFlow<double>>(2, MaskSpec::make(o)), rng, 0.4);
                   }});
    }
    r.push_back({"mcf_bottom_context", LayerKind::kMaskedConvBottom, Shape{1, 4, 4, 2}, 3, [](Rng& rng) {
                   return randomized(
                       std::make_unique<MaskedConvFlow<double>>(2, MaskSpec::make(Orientation::kBottom), 3), rng, 0.4);
                 }});
    r.push_back({"mcf_unit", LayerKind::kMcfUnit, Shape{1, 4, 4, 2}, 0, [](Rng& rng) {
                   return randomized(make_mcf_unit<double>(2, 2, 5, Orientation::kTop, Orientation::kBottom), rng, 0.3);
                 }});
    return r;
  }();
  return registry;
}

std::vector<CheckResult> check_registry_coverage(const std::vector<RegisteredLayer>& registry) {
  std::set<LayerKind> covered;
  for (const auto& entry : registry) covered.insert(entry.kind);
  std::vector<CheckResult> out;
  for (int k = 0; k < static_cast<int>(LayerKind::kCount); ++k) {
    const auto kind = static_cast<LayerKind>(k);
    const bool ok = covered.contains(kind);
    out.push_back(result(fmt::format("registry/{}", to_string(kind)), ok, ok ? "registered" : "no registry entry"));
  }
  return out;
}

std::vector<CheckResult> check_layers(const std::vector<RegisteredLayer>& registry, std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  for (const auto& entry : registry) {
    auto layer = entry.make(rng);
    if (layer->kind() != entry.kind) {
      out.push_back(result("layer/" + entry.name, false, "instance reports a different kind"));
      continue;
    }
    const auto x = normal_tensor<double>(entry.shape, rng);
    Tensor<double> ctx;
    ad::Var<double> ctx_var;
    if (entry.context_channels > 0) {
      ctx = normal_tensor<double>(Shape{1, entry.shape.h(), entry.shape.w(), entry.context_channels}, rng);
      ctx_var = ad::constant(ctx);
    }
    const Tensor<double>* ctx_ptr = entry.context_channels ? &ctx : nullptr;
    ad::Tape<double> tape(ad::Recording::kOff);
    auto r = layer->forward(tape, ad::constant(x), entry.context_channels ? &ctx_var : nullptr);
    const bool shape_ok = r.y.shape() == layer->output_shape(x.shape());
    const double trip = max_abs_diff(layer->inverse(r.y.value(), ctx_ptr), x);
    const double analytic = r.logdet.value()[0];
    const double brute = oracle::brute_force_logdet(oracle::layer_map(*layer, x.shape(), ctx_ptr), x.storage());
    const double gap = relative_gap(analytic, brute);
    out.push_back(result("layer/" + entry.name, shape_ok && trip < 1e-8 && gap < 1e-5,
                         fmt::format("round trip {:.2e}, logdet {:.8g} vs oracle {:.8g} (rel {:.2e}){}", trip, analytic,
                                     brute, gap, shape_ok ? "" : ", output shape mismatch")));
  }
  return out;
}

std::vector<NamedModelConfig> invertibility_configs() {
  ModelConfig base;
  base.height = base.width = 8;
  base.channels = 3;
  base.hidden_channels = 16;
  ModelConfig original = base;
  original.multiscale = MultiScale::kOriginal;
  original.depths = {{2}, {2}};
  ModelConfig fine = base;
  fine.multiscale = MultiScale::kFineGrained;
  fine.depths = {{1, 1}, {1}};
  ModelConfig additive = fine;
  additive.coupling = CouplingMode::kAdditive;
  return {{"original_m2", original}, {"fine_grained_m4", fine}, {"additive", additive}};
}

namespace {

template <typename T>
CheckResult invertibility_case(const NamedModelConfig& named, std::uint64_t seed, double tol) {
  Rng rng(seed);
  Model<T> model(named.config, rng);
  model.randomize(rng, 0.1);
  const auto x = normal_tensor<T>(model.input_shape(2), rng);
  const auto [zs, logdet] = model.encode(x);
  const double err = static_cast<double>(max_abs_diff(model.decode(zs), x));
  const bool dims_ok = zs.dims_per_item() == named.config.dims();
  return result(fmt::format("invertibility/{}/{}", named.name, std::is_same_v<T, float> ? "f32" : "f64"),
                dims_ok && err < tol, fmt::format("max |decode(encode(x)) - x| = {:.3e} (limit {:.0e})", err, tol));
}

}  // namespace

std::vector<CheckResult> check_invertibility(Precision precision, std::uint64_t seed) {
  std::vector<CheckResult> out;
  for (const auto& named : invertibility_configs()) {
    out.push_back(precision == Precision::kF64 ? invertibility_case<double>(named, seed, 1e-8)
                                               : invertibility_case<float>(named, seed, 1e-4));
  }
  return out;
}

CheckResult check_model_logdet(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.height = cfg.width = 4;
  cfg.channels = 2;
  cfg.depths = {{1}};
  cfg.multiscale = MultiScale::kOriginal;
  cfg.hidden_channels = 4;
  Rng rng(seed);
  Model<double> model(cfg, rng);
  model.randomize(rng, 0.2);
  const auto x = normal_tensor<double>(model.input_shape(1), rng);
  auto latents = [&model](const std::vector<double>& v) {
    auto zs = model.encode(Tensor<double>(model.input_shape(1), v)).first;
    std::vector<double> flat;
    for (const auto& z : zs.z) flat.insert(flat.end(), z.storage().begin(), z.storage().end());
    return flat;
  };
  const double brute = oracle::brute_force_logdet(latents, x.storage());
  const double analytic = model.encode(x).second[0];
  const double gap = relative_gap(analytic, brute);
  return result("logdet/model_1_level_d32", gap < 1e-5,
                fmt::format("model {:.8g} vs oracle {:.8g} (rel {:.2e})", analytic, brute, gap));
}

RunConfig gradient_toy_config() {
  RunConfig cfg;
  auto& m = cfg.model;
  m.height = m.width = 4;
  m.channels = 1;
  m.n_bits = 3;
  m.depths = {{1}};
  m.multiscale = MultiScale::kOriginal;
  m.coupling = CouplingMode::kAdditive;
  m.hidden_channels = 1;
  m.kernel_h = 2;
  m.kernel_w = 1;
  m.units_per_step = 1;
  m.dequant = DequantMode::kVariational;
  m.dequant_units = 1;
  m.dequant_hidden = 1;
  m.dequant_context = 1;
  m.dequant_coupling = CouplingMode::kAdditive;
  cfg.train.precision = Precision::kF64;
  return cfg;
}

CheckResult check_objective_gradient(std::uint64_t seed) {
  const RunConfig cfg = gradient_toy_config();
  Rng rng(seed);
  Model<double> model(cfg.model, rng);
  Dequantizer<double> deq(cfg.model, rng);
  model.randomize(rng, 0.3);
  deq.randomize(rng, 0.3);
  auto params = model.parameters();
  for (auto& p : deq.parameters()) params.push_back(p);
  std::size_t count = 0;
  for (const auto& p : params) count += p.var.value().size();

  const Shape shape{2, cfg.model.height, cfg.model.width, cfg.model.channels};
  Tensor<double> x(shape);
  for (auto& v : x.data()) v = std::floor(rng.uniform() * std::ldexp(1.0, static_cast<int>(cfg.model.n_bits)));
  const auto noise = deq.draw_noise(shape, rng);

  ad::Tape<double> tape;
  tape.backward(nll_objective(tape, model, deq, x, noise).loss);
  double worst = 0;
  std::string worst_name;
  for (auto& p : params) {
    const Tensor<double> analytic = p.var.grad();
    const Tensor<double> original = p.var.value();
    auto f = [&](const Tensor<double>& value) {
      p.var.mutable_value() = value;
      ad::Tape<double> off(ad::Recording::kOff);
      return nll_objective(off, model, deq, x, noise).loss.value()[0];
    };
    const auto numeric = finite_diff_grad<double>(f, original, 1e-4);
    p.var.mutable_value() = original;
    const double err = max_relative_error(analytic, numeric, 1e-4);
    if (err > worst) {
      worst = err;
      worst_name = p.name;
    }
  }
  return result("gradient/objective", count <= 500 && worst < 1e-5,
                fmt::format("{} parameters, worst relative error {:.2e} ({})", count, worst, worst_name));
}

std::vector<CheckResult> check_mask_locality(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  const std::size_t h = 4, w = 4, d = h * w;
  for (auto o : {Orientation::kTop, Orientation::kBottom, Orientation::kLeft, Orientation::kRight}) {
    MaskedConvFlow<double> layer(1, MaskSpec::make(o));
    layer.randomize(rng, 0.5);
    const auto x = normal_tensor<double>(Shape{1, h, w, 1}, rng);
    const auto jac = oracle::dense_jacobian(oracle::layer_map(layer, x.shape()), x.storage());
    const auto field = oracle::declared_receptive_field(layer.spec(), h, w);
    const auto order = oracle::autoregressive_order(o, h, w);
    std::vector<std::size_t> rank(d);
    for (std::size_t k = 0; k < d; ++k) rank[order[k]] = k;

    std::size_t pattern_errors = 0, order_errors = 0;
    double diag_gap = 0;
    ad::Tape<double> tape(ad::Recording::kOff);
    const auto y = layer.forward(tape, ad::constant(x)).y.value();
    for (std::size_t t = 0; t < d; ++t) {
      for (std::size_t u = 0; u < d; ++u) {
        const bool nonzero = jac[t * d + u] != 0.0;
        if (u != t && nonzero != field[t * d + u]) ++pattern_errors;
        if (rank[u] > rank[t] && nonzero) ++order_errors;
      }
      // y_t is affine in x_t, so a unit step exposes the scale exactly.
      auto stepped = x;
      stepped[t] += 1.0;
      const double scale = layer.forward(tape, ad::constant(stepped)).y.value()[t] - y[t];
      diag_gap = std::max(diag_gap, std::abs(jac[t * d + t] - scale) / scale);
    }
    out.push_back(result(fmt::format("locality/{}", to_string(o)),
                         pattern_errors == 0 && order_errors == 0 && diag_gap < 1e-8,
                         fmt::format("{} pattern mismatches, {} entries above the ordering, diagonal rel gap {:.2e}",
                                     pattern_errors, order_errors, diag_gap)));
  }
  return out;
}

std::vector<CheckResult> check_inversion_counts(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  const Shape shape{1, 6, 5, 2};
  for (auto o : {Orientation::kTop, Orientation::kBottom, Orientation::kLeft, Orientation::kRight}) {
    MaskedConvFlow<double> layer(2, MaskSpec::make(o));
    layer.randomize(rng, 0.4);
    ad::Tape<double> tape(ad::Recording::kOff);
    const auto y = layer.forward(tape, ad::constant(normal_tensor<double>(shape, rng))).y.value();
    layer.reset_conv_applications();
    const auto fast = layer.inverse(y);
    const std::size_t fast_count = layer.conv_applications();
    std::size_t slow_count = 0;
    const auto slow = oracle::sequential_inversion(y, layer, &slow_count);
    const double gap = max_abs_diff(fast, slow);
    const std::size_t want = is_vertical(o) ? shape.h() : shape.w();
    out.push_back(result(fmt::format("inversion/{}", to_string(o)),
                         fast_count == want && slow_count == shape.h() * shape.w() && gap < 1e-10,
                         fmt::format("slab applications {} (expected {}), oracle {} (expected {}), max gap {:.2e}",
                                     fast_count, want, slow_count, shape.h() * shape.w(), gap)));
  }
  return out;
}

std::vector<CheckResult> run_verify_suite(Precision precision, std::uint64_t seed) {
  std::vector<CheckResult> out;
  auto append = [&out](std::vector<CheckResult> part) { out.insert(out.end(), part.begin(), part.end()); };
  const auto& registry = layer_registry();
  append(check_registry_coverage(registry));
  append(check_layers(registry, seed));
  append(check_invertibility(Precision::kF64, seed));
  if (precision == Precision::kF32) append(check_invertibility(Precision::kF32, seed));
  out.push_back(check_model_logdet(seed));
  out.push_back(check_objective_gradient(seed));
  append(check_mask_locality(seed));
  append(check_inversion_counts(seed));
  return out;
}

}  // namespace macow
