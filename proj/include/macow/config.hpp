#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "macow/flow_layers.hpp"

namespace macow {

enum class MultiScale { kOriginal, kFineGrained };
enum class DequantMode { kUniform, kVariational };
enum class Precision { kF32, kF64 };

std::string_view to_string(MultiScale m);
std::string_view to_string(DequantMode m);
std::string_view to_string(Precision p);

struct ModelConfig {
  // Data.
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t channels = 1;
  unsigned n_bits = 5;

  // Flow. depths[l][b] = steps in block b of level l.
  std::vector<std::vector<std::size_t>> depths{{2, 2}, {2}};
  MultiScale multiscale = MultiScale::kFineGrained;
  CouplingMode coupling = CouplingMode::kAffine;
  std::size_t hidden_channels = 32;
  std::size_t kernel_h = 2;
  std::size_t kernel_w = 5;
  std::size_t units_per_step = 2;

  // Variational dequantizer.
  DequantMode dequant = DequantMode::kVariational;
  std::size_t dequant_units = 2;
  std::size_t dequant_hidden = 16;
  std::size_t dequant_context = 4;
  CouplingMode dequant_coupling = CouplingMode::kAffine;

  std::size_t levels() const { return depths.size(); }
  /// 2 for the original multi-scale layout, 4 for the fine-grained one.
  std::size_t split_factor() const { return multiscale == MultiScale::kOriginal ? 2 : 4; }
  std::size_t dims() const { return height * width * channels; }

  /// Raises kConfig when the architecture cannot be built.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t steps = 2000;
  double learning_rate = 1e-3;
  std::size_t warmup_steps = 500;
  double decay_rate = 0.999997;
  double clip_norm = 100.0;
  std::uint64_t seed = 1;
  std::size_t checkpoint_interval = 0;  // 0: only at the end
  std::size_t eval_samples = 1;         // K
  double temperature = 1.0;
  Precision precision = Precision::kF32;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Parses flat `key = value` text; `#` starts a comment. Unknown keys,
/// duplicates and malformed values raise kConfig.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Overrides one key with the same parsing rules; does not validate.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
/// The value config_text() writes for key; kConfig when unknown.
std::string config_value(const RunConfig& cfg, const std::string& key);

/// Canonical text for every model key, in a fixed order.
std::string model_config_text(const ModelConfig& cfg);
std::string config_text(const RunConfig& cfg);

/// "[[2,2],2]" -> {{2,2},{2}}.
std::vector<std::vector<std::size_t>> parse_depths(const std::string& text);
std::string format_depths(const std::vector<std::vector<std::size_t>>& depths);

}  // namespace macow
