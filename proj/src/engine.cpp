#include "macow/engine.hpp"

#include "macow/training.hpp"

namespace macow {
namespace {

template <typename T>
class TypedEngine final : public Engine {
 public:
  explicit TypedEngine(std::unique_ptr<Trainer<T>> trainer) : trainer_(std::move(trainer)) {}

  const RunConfig& config() const override { return trainer_->config(); }
  std::uint64_t step() const override { return trainer_->step(); }
  std::uint64_t skipped_steps() const override { return trainer_->skipped_steps(); }

  std::size_t parameter_count() override {
    std::size_t n = 0;
    for (const auto& p : trainer_->parameters()) n += p.var.value().size();
    return n;
  }

  void train(const Dataset& data, std::ostream* log, const std::optional<std::filesystem::path>& checkpoint,
             std::optional<std::uint64_t> until) override {
    trainer_->fit(data, log, checkpoint, until);
  }

  double evaluate(const Dataset& data, std::size_t k, std::uint64_t seed) override {
    return evaluate_bpd(*trainer_, data, k, seed);
  }

  Tensor<double> sample(std::size_t n, double temperature, std::uint64_t seed) override {
    require(n > 0, ErrorCode::kValidation, "sample count must be positive");
    Rng rng(seed, streams::kSample);
    return trainer_->model().sample(n, temperature, rng).template cast<double>();
  }

  Checkpoint checkpoint() override { return trainer_->checkpoint(); }

 private:
  std::unique_ptr<Trainer<T>> trainer_;
};

}  // namespace

std::unique_ptr<Engine> Engine::create(const RunConfig& cfg) {
  cfg.model.validate();
  cfg.train.validate();
  if (cfg.train.precision == Precision::kF32)
    return std::make_unique<TypedEngine<float>>(std::make_unique<Trainer<float>>(cfg));
  return std::make_unique<TypedEngine<double>>(std::make_unique<Trainer<double>>(cfg));
}

std::unique_ptr<Engine> Engine::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.precision == Precision::kF32)
    return std::make_unique<TypedEngine<float>>(Trainer<float>::from_checkpoint(ckpt));
  return std::make_unique<TypedEngine<double>>(Trainer<double>::from_checkpoint(ckpt));
}

std::unique_ptr<Engine> Engine::load(const std::filesystem::path& path) {
  return from_checkpoint(load_checkpoint(path));
}

}  // namespace macow
