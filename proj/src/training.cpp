#include "macow/training.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include <fmt/format.h>

namespace macow {

double lr_schedule(std::uint64_t step, double base_lr, std::uint64_t warmup, double decay) {
  if (warmup > 0 && step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  return base_lr * std::pow(decay, static_cast<double>(step - warmup));
}

template <typename T>
Adam<T>::Adam(std::vector<NamedParameter<T>> params, Settings settings)
    : params_(std::move(params)), settings_(settings) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  ++t_;
  const double b1 = settings_.beta1, b2 = settings_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& var = params_[i].var;
    if (!var.has_grad()) continue;
    const Tensor<T>& g = var.grad();
    Tensor<T>& w = var.mutable_value();
    Tensor<T>& m = m_[i];
    Tensor<T>& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      const double mk = b1 * static_cast<double>(m[k]) + (1.0 - b1) * gk;
      const double vk = b2 * static_cast<double>(v[k]) + (1.0 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = lr * (mk / c1) / (std::sqrt(vk / c2) + settings_.eps);
      w[k] = static_cast<T>(static_cast<double>(w[k]) - update);
    }
  }
}

template <typename T>
OptimizerRecord Adam<T>::record() const {
  OptimizerRecord rec;
  rec.beta1 = settings_.beta1;
  rec.beta2 = settings_.beta2;
  rec.eps = settings_.eps;
  rec.adam_steps = t_;
  for (std::size_t i = 0; i < params_.size(); ++i)
    rec.moments.push_back({params_[i].name, to_mcwt(m_[i]), to_mcwt(v_[i])});
  return rec;
}

template <typename T>
void Adam<T>::restore(const OptimizerRecord& rec) {
  require(rec.moments.size() == params_.size(), ErrorCode::kValidation,
          fmt::format("optimizer state has {} moment pairs, model has {} parameters", rec.moments.size(),
                      params_.size()));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& mm = rec.moments[i];
    require(mm.name == params_[i].name, ErrorCode::kValidation,
            fmt::format("optimizer state entry '{}' does not match parameter '{}'", mm.name, params_[i].name));
    auto m = from_mcwt<T>(mm.first);
    auto v = from_mcwt<T>(mm.second);
    require(m.shape() == params_[i].var.shape() && v.shape() == params_[i].var.shape(), ErrorCode::kDimension,
            fmt::format("optimizer moments for '{}' have the wrong shape", mm.name));
    m_[i] = std::move(m);
    v_[i] = std::move(v);
  }
  settings_ = {rec.beta1, rec.beta2, rec.eps};
  t_ = rec.adam_steps;
}

template <typename T>
double global_grad_norm(const std::vector<NamedParameter<T>>& params) {
  double sq = 0;
  for (const auto& p : params) {
    if (!p.var.has_grad()) continue;
    for (T g : p.var.grad().data()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_gradients(const std::vector<NamedParameter<T>>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (const auto& p : params) {
    if (!p.var.has_grad()) continue;
    for (T& g : p.var.grad().data()) g = static_cast<T>(static_cast<double>(g) * factor);
  }
  return factor;
}

std::string format_log_row(const StepLog& log) {
  return fmt::format("{},{:.10g},{:.10g},{:.10g},{:.10g}", log.step, log.loss_nats, log.bpd, log.lr, log.grad_norm);
}

template <typename T>
Trainer<T>::Trainer(const RunConfig& cfg) : cfg_(cfg) {
  cfg_.model.validate();
  cfg_.train.validate();
  Rng init(cfg_.train.seed, streams::kInit);
  model_ = std::make_unique<Model<T>>(cfg_.model, init);
  deq_ = std::make_unique<Dequantizer<T>>(cfg_.model, init);
  adam_ = std::make_unique<Adam<T>>(parameters());
}

template <typename T>
std::vector<NamedParameter<T>> Trainer<T>::parameters() {
  auto out = model_->parameters();
  for (auto& p : deq_->parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<NamedFlag> Trainer<T>::flags() {
  auto out = model_->flags();
  for (auto& f : deq_->flags()) out.push_back(f);
  return out;
}

void check_dataset_matches(const ModelConfig& m, const Dataset& data) {
  require(data.height == m.height && data.width == m.width && data.channels == m.channels, ErrorCode::kDimension,
          fmt::format("dataset images are {}x{}x{}, the model expects {}x{}x{}", data.height, data.width,
                      data.channels, m.height, m.width, m.channels));
  require(data.n_bits == m.n_bits, ErrorCode::kValidation,
          fmt::format("dataset is quantized to {} bits, the model expects {}", data.n_bits, m.n_bits));
  require(data.size() > 0, ErrorCode::kValidation, "dataset is empty");
}

template <typename T>
StepLog Trainer<T>::train_step(const Dataset& data) {
  check_dataset_matches(cfg_.model, data);
  const auto& tc = cfg_.train;
  const BatchOrder order(data.size(), tc.batch_size, tc.seed);
  const Tensor<T> x = data.gather<T>(order.batch(step_));
  Rng noise_rng(tc.seed, streams::kDequant, step_);
  const Tensor<T> noise = deq_->draw_noise(x.shape(), noise_rng);

  const auto& params = adam_->parameters();
  for (const auto& p : params) p.var.zero_grad();
  StepLog log;
  log.step = step_;
  log.lr = lr_schedule(step_, tc.learning_rate, tc.warmup_steps, tc.decay_rate);
  log.loss_nats = std::numeric_limits<double>::quiet_NaN();
  log.grad_norm = std::numeric_limits<double>::quiet_NaN();
  try {
    ad::Tape<T> tape;
    auto obj = nll_objective(tape, *model_, *deq_, x, noise);
    log.loss_nats = static_cast<double>(obj.loss.value()[0]);
    // Gradients are taken per dimension so their scale does not grow with the
    // image size; the log still reports nats per image.
    tape.backward(ad::mul_scalar(tape, obj.loss, static_cast<T>(1.0 / static_cast<double>(cfg_.model.dims()))));
    log.grad_norm = global_grad_norm(params);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNumeric) throw;
  }
  log.bpd = bits_per_dim(log.loss_nats, cfg_.model.dims());
  if (!std::isfinite(log.loss_nats) || !std::isfinite(log.grad_norm)) {
    warn(fmt::format("step {}: non-finite loss or gradient (loss {}, norm {}); update skipped", step_, log.loss_nats,
                     log.grad_norm));
    log.skipped = true;
    ++skipped_;
  } else {
    if (clip_gradients(params, tc.clip_norm) < 1.0) {
      log.clipped = true;
      warn(fmt::format("step {}: gradient norm {:.4g} clipped to {}", step_, log.grad_norm, tc.clip_norm));
    }
    adam_->step(log.lr);
  }
  ++step_;
  return log;
}

template <typename T>
void Trainer<T>::fit(const Dataset& data, std::ostream* log,
                     const std::optional<std::filesystem::path>& checkpoint_path, std::optional<std::uint64_t> until,
                     const std::function<void(const StepLog&)>& on_step) {
  const std::uint64_t last = until.value_or(cfg_.train.steps);
  if (log && step_ == 0) *log << kTrainLogHeader << '\n';
  while (step_ < last) {
    const StepLog row = train_step(data);
    if (log) *log << format_log_row(row) << '\n';
    if (on_step) on_step(row);
    const auto interval = cfg_.train.checkpoint_interval;
    if (checkpoint_path && interval > 0 && step_ % interval == 0 && step_ < last)
      save_checkpoint(*checkpoint_path, checkpoint());
  }
  if (log) log->flush();
  if (checkpoint_path) save_checkpoint(*checkpoint_path, checkpoint());
}

template <typename T>
double Trainer<T>::evaluate(const Tensor<T>& x, std::size_t k, Rng& rng) {
  for (const auto& f : flags())
    require(*f.value, ErrorCode::kState, fmt::format("cannot evaluate before '{}' is initialized by training", f.name));
  const std::size_t n = x.shape().n();
  require(n > 0, ErrorCode::kValidation, "evaluation set is empty");
  double total = 0;
  for (std::size_t begin = 0; begin < n; begin += cfg_.train.batch_size) {
    const std::size_t end = std::min(n, begin + cfg_.train.batch_size);
    for (double b : importance_weighted_bound(*model_, *deq_, slice_batch(x, begin, end), k, rng)) total -= b;
  }
  return bits_per_dim(total / static_cast<double>(n), cfg_.model.dims());
}

template <typename T>
Checkpoint Trainer<T>::checkpoint() {
  Checkpoint ckpt;
  ckpt.precision = std::is_same_v<T, float> ? Precision::kF32 : Precision::kF64;
  ckpt.config = config_text(cfg_);
  ckpt.step = step_;
  for (const auto& p : parameters()) ckpt.parameters.push_back({p.name, to_mcwt(p.var.value())});
  for (const auto& f : flags()) ckpt.flags.emplace_back(f.name, *f.value);
  ckpt.optimizer = adam_->record();
  ckpt.optimizer.skipped_steps = skipped_;
  return ckpt;
}

template <typename T>
std::unique_ptr<Trainer<T>> Trainer<T>::from_checkpoint(const Checkpoint& ckpt) {
  const Precision want = std::is_same_v<T, float> ? Precision::kF32 : Precision::kF64;
  require(ckpt.precision == want, ErrorCode::kValidation,
          fmt::format("checkpoint holds {} parameters, requested {}", to_string(ckpt.precision), to_string(want)));
  RunConfig cfg = parse_config(ckpt.config);
  cfg.train.precision = want;
  auto trainer = std::make_unique<Trainer<T>>(cfg);
  auto params = trainer->parameters();
  require(params.size() == ckpt.parameters.size(), ErrorCode::kValidation,
          fmt::format("checkpoint has {} parameter tensors, the configured model has {}", ckpt.parameters.size(),
                      params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& rec = ckpt.parameters[i];
    require(rec.name == params[i].name, ErrorCode::kValidation,
            fmt::format("checkpoint tensor '{}' does not match parameter '{}'", rec.name, params[i].name));
    auto value = from_mcwt<T>(rec.value);
    require(value.shape() == params[i].var.shape(), ErrorCode::kDimension,
            fmt::format("checkpoint tensor '{}' has shape {}, expected {}", rec.name, to_string(value.shape()),
                        to_string(params[i].var.shape())));
    params[i].var.mutable_value() = std::move(value);
  }
  auto flags = trainer->flags();
  require(flags.size() == ckpt.flags.size(), ErrorCode::kValidation, "checkpoint flag count does not match the model");
  for (std::size_t i = 0; i < flags.size(); ++i) {
    require(flags[i].name == ckpt.flags[i].first, ErrorCode::kValidation,
            fmt::format("checkpoint flag '{}' does not match '{}'", ckpt.flags[i].first, flags[i].name));
    *flags[i].value = ckpt.flags[i].second;
  }
  trainer->adam_->restore(ckpt.optimizer);
  trainer->step_ = ckpt.step;
  trainer->skipped_ = ckpt.optimizer.skipped_steps;
  return trainer;
}

template <typename T>
double evaluate_bpd(Trainer<T>& trainer, const Dataset& data, std::size_t k, std::uint64_t seed) {
  check_dataset_matches(trainer.config().model, data);
  Rng rng(seed, streams::kEval);
  return trainer.evaluate(data.all<T>(), k, rng);
}

#define MACOW_INSTANTIATE(T)                                                                 \
  template class Adam<T>;                                                                    \
  template class Trainer<T>;                                                                 \
  template double global_grad_norm(const std::vector<NamedParameter<T>>&);                   \
  template double clip_gradients(const std::vector<NamedParameter<T>>&, double);             \
  template double evaluate_bpd(Trainer<T>&, const Dataset&, std::size_t, std::uint64_t);
MACOW_INSTANTIATE(float)
MACOW_INSTANTIATE(double)
#undef MACOW_INSTANTIATE

}  // namespace macow
