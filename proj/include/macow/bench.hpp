#pragma once

#include <string>
#include <vector>

#include "macow/config.hpp"

namespace macow {

struct BenchRow {
  std::size_t size = 0;  // image height = width
  std::size_t batch = 0;
  double ms_per_datapoint = 0;
  std::size_t conv_applications = 0;  // slab convolutions for one sample() call
};

struct BenchOptions {
  std::vector<std::size_t> sizes{16, 32};
  std::size_t batch = 100;
  std::size_t repeats = 5;
  std::size_t warmup = 1;
  std::uint64_t seed = 1;
  Precision precision = Precision::kF32;
  /// Shared structure; height/width are overwritten per size.
  ModelConfig model = default_bench_model();

  static ModelConfig default_bench_model();
};

/// Median sampling time per image for each size. A repeat shorter than 10
/// clock ticks is rerun with twice as many inner iterations.
std::vector<BenchRow> bench_sample(const BenchOptions& options);

/// Slab convolutions one sample() call should perform: each masked flow costs
/// its height (top/bottom) or width (left/right) at its level.
std::size_t expected_conv_applications(const ModelConfig& cfg);

inline constexpr const char* kBenchHeader = "size,batch,ms_per_datapoint,conv_applications";
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace macow
