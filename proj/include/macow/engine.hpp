#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>

#include "macow/checkpoint.hpp"
#include "macow/dataset.hpp"
#include "macow/config.hpp"

namespace macow {

/// A training run with its precision erased; what the C API hands out.
class Engine {
 public:
  virtual ~Engine() = default;

  static std::unique_ptr<Engine> create(const RunConfig& cfg);
  static std::unique_ptr<Engine> from_checkpoint(const Checkpoint& ckpt);
  static std::unique_ptr<Engine> load(const std::filesystem::path& path);

  virtual const RunConfig& config() const = 0;
  virtual std::uint64_t step() const = 0;
  virtual std::uint64_t skipped_steps() const = 0;
  virtual std::size_t parameter_count() = 0;

  /// Trains up to `until` (default: the configured step count).
  virtual void train(const Dataset& data, std::ostream* log, const std::optional<std::filesystem::path>& checkpoint,
                     std::optional<std::uint64_t> until) = 0;
  virtual double evaluate(const Dataset& data, std::size_t k, std::uint64_t seed) = 0;
  /// n samples in data coordinates, widened to double.
  virtual Tensor<double> sample(std::size_t n, double temperature, std::uint64_t seed) = 0;

  virtual Checkpoint checkpoint() = 0;
  void save(const std::filesystem::path& path) { save_checkpoint(path, checkpoint()); }
};

}  // namespace macow
