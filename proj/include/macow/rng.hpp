#pragma once

#include <cstdint>
#include <random>

#include "macow/tensor.hpp"

namespace macow {

/// Seeded random stream. (seed, stream, counter) fully determine the sequence,
/// so any step of a run can be re-created without saved generator state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t counter = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32)};
    engine_.seed(seq);
  }

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() { return normal_(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

template <typename T>
Tensor<T> normal_tensor(const Shape& shape, Rng& rng, double stddev = 1.0) {
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(stddev * rng.normal());
  return t;
}

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return t;
}

// Stream identifiers keep independent consumers of one seed apart.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kData = 2;
inline constexpr std::uint64_t kDequant = 3;
inline constexpr std::uint64_t kSample = 4;
inline constexpr std::uint64_t kEval = 5;
}  // namespace streams

}  // namespace macow
