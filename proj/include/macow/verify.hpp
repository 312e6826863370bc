#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "macow/config.hpp"
#include "macow/flow_layers.hpp"

namespace macow {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// One shipped layer type with a small f64 test shape.
struct RegisteredLayer {
  std::string name;
  LayerKind kind;
  Shape shape;  // n = 1, d <= 64
  std::size_t context_channels = 0;
  std::function<std::unique_ptr<FlowLayer<double>>(Rng&)> make;  // randomized instance
};

const std::vector<RegisteredLayer>& layer_registry();

/// Fails for every LayerKind without a registry entry.
std::vector<CheckResult> check_registry_coverage(const std::vector<RegisteredLayer>& registry);
/// Round trip, output shape and log-det against the dense-Jacobian oracle.
std::vector<CheckResult> check_layers(const std::vector<RegisteredLayer>& registry, std::uint64_t seed);

/// Model configs the invertibility checks cover.
struct NamedModelConfig {
  std::string name;
  ModelConfig config;
};
std::vector<NamedModelConfig> invertibility_configs();

/// decode(encode(x)) on random [2, h, w, c] inputs; tolerance 1e-8 (f64) or 1e-4 (f32).
std::vector<CheckResult> check_invertibility(Precision precision, std::uint64_t seed);
/// Whole-model log-det against the oracle on a 1-level model with d = 32.
CheckResult check_model_logdet(std::uint64_t seed);
/// Toy model plus variational dequantizer with fewer than 500 parameters.
RunConfig gradient_toy_config();
/// Full objective gradient against central differences, relative 1e-5.
CheckResult check_objective_gradient(std::uint64_t seed);
/// Jacobian zero pattern, ordering and diagonal for every orientation on [1,4,4,1].
std::vector<CheckResult> check_mask_locality(std::uint64_t seed);
/// Slab inversion against the pixel-at-a-time oracle, with application counts.
std::vector<CheckResult> check_inversion_counts(std::uint64_t seed);

/// Everything above. f32 additionally runs the f32 invertibility checks.
std::vector<CheckResult> run_verify_suite(Precision precision, std::uint64_t seed);

}  // namespace macow
