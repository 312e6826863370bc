#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>

#include "macow/checkpoint.hpp"
#include "macow/dataset.hpp"
#include "macow/dequant.hpp"

namespace macow {

/// Linear ramp from 0 over `warmup` updates, then exponential decay.
double lr_schedule(std::uint64_t step, double base_lr, std::uint64_t warmup, double decay);

/// Bias-corrected Adam over a fixed parameter list.
template <typename T>
class Adam {
 public:
  struct Settings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(std::vector<NamedParameter<T>> params, Settings settings = {});

  /// Applies one update with the parameters' current gradients.
  void step(double lr);
  std::uint64_t steps() const { return t_; }
  const Settings& settings() const { return settings_; }
  const std::vector<NamedParameter<T>>& parameters() const { return params_; }

  OptimizerRecord record() const;
  void restore(const OptimizerRecord& rec);

 private:
  std::vector<NamedParameter<T>> params_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  Settings settings_;
  std::uint64_t t_ = 0;
};

/// sqrt of the sum of squared gradient entries, accumulated in double.
template <typename T>
double global_grad_norm(const std::vector<NamedParameter<T>>& params);

/// Scales all gradients so their global norm is at most max_norm; returns the
/// factor applied (1 when no clipping happened).
template <typename T>
double clip_gradients(const std::vector<NamedParameter<T>>& params, double max_norm);

struct StepLog {
  std::uint64_t step = 0;
  double loss_nats = 0;  // mean per item
  double bpd = 0;
  double lr = 0;
  double grad_norm = 0;  // before clipping
  bool clipped = false;
  bool skipped = false;
};

/// CSV header of the training log.
inline constexpr const char* kTrainLogHeader = "step,loss_nats,bpd,lr,grad_norm";
std::string format_log_row(const StepLog& log);

/// Model, dequantizer and optimizer for one run. Every random draw is keyed by
/// (seed, stream, step), so a run resumed from a checkpoint repeats the
/// uninterrupted run exactly.
template <typename T>
class Trainer {
 public:
  Trainer(const RunConfig& cfg);
  /// Rebuilds the run recorded in a checkpoint.
  static std::unique_ptr<Trainer> from_checkpoint(const Checkpoint& ckpt);

  const RunConfig& config() const { return cfg_; }
  Model<T>& model() { return *model_; }
  Dequantizer<T>& dequantizer() { return *deq_; }
  std::uint64_t step() const { return step_; }
  std::uint64_t skipped_steps() const { return skipped_; }

  /// One update on the batch scheduled for the current step.
  StepLog train_step(const Dataset& data);
  /// Runs until `cfg.train.steps` (or `until`), writing CSV rows to `log` and
  /// checkpoints to `checkpoint_path` every checkpoint_interval steps and at
  /// the end.
  void fit(const Dataset& data, std::ostream* log, const std::optional<std::filesystem::path>& checkpoint_path,
           std::optional<std::uint64_t> until = std::nullopt,
           const std::function<void(const StepLog&)>& on_step = nullptr);

  /// Mean bound in bits/dim over `x` (integer levels); K importance samples per
  /// image. Batches of the run's batch size, in order.
  double evaluate(const Tensor<T>& x, std::size_t k, Rng& rng);

  Checkpoint checkpoint();

  /// Every learnable tensor: model first, then dequantizer.
  std::vector<NamedParameter<T>> parameters();
  std::vector<NamedFlag> flags();

 private:
  RunConfig cfg_;
  std::unique_ptr<Model<T>> model_;
  std::unique_ptr<Dequantizer<T>> deq_;
  std::unique_ptr<Adam<T>> adam_;
  std::uint64_t step_ = 0;
  std::uint64_t skipped_ = 0;
};

/// Raises when the dataset is empty or its image shape or bit depth differs from cfg.
void check_dataset_matches(const ModelConfig& cfg, const Dataset& data);

/// Bits/dim of the mean over a dataset (K-sample bound) with the eval stream.
template <typename T>
double evaluate_bpd(Trainer<T>& trainer, const Dataset& data, std::size_t k, std::uint64_t seed);

}  // namespace macow
