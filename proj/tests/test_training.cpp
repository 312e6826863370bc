#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "macow/training.hpp"

using namespace macow;

namespace {

RunConfig small_run(DequantMode mode = DequantMode::kVariational) {
  RunConfig cfg;
  auto& m = cfg.model;
  m.height = m.width = 4;
  m.n_bits = 5;
  m.depths = {{1}, {1}};
  m.multiscale = MultiScale::kOriginal;
  m.hidden_channels = 4;
  m.kernel_w = 3;
  m.units_per_step = 1;
  m.dequant = mode;
  m.dequant_units = 1;
  m.dequant_hidden = 4;
  m.dequant_context = 2;
  cfg.train.batch_size = 4;
  cfg.train.steps = 6;
  cfg.train.warmup_steps = 2;
  cfg.train.seed = 7;
  cfg.train.precision = Precision::kF64;
  return cfg;
}

Dataset toy(std::size_t n = 10) { return quantize(make_toy_images(n, 4, 4, 11), 5); }

std::vector<double> flat_parameters(Trainer<double>& t) {
  std::vector<double> out;
  for (auto& p : t.parameters()) out.insert(out.end(), p.var.value().storage().begin(), p.var.value().storage().end());
  return out;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  CHECK(lr_schedule(0, 1e-3, 500, 0.999997) == 0.0);
  CHECK(lr_schedule(250, 1e-3, 500, 0.999997) == doctest::Approx(5e-4));
  CHECK(lr_schedule(500, 1e-3, 500, 0.999997) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(lr_schedule(501, 1e-3, 500, 0.999997) == doctest::Approx(1e-3 * 0.999997).epsilon(1e-15));
  CHECK(std::abs(lr_schedule(499, 1e-3, 500, 0.999997) - lr_schedule(500, 1e-3, 500, 0.999997)) < 2.1e-6);
  CHECK(lr_schedule(3, 0.1, 0, 0.5) == doctest::Approx(0.0125));
}

TEST_CASE("Adam basics") {
  SUBCASE("zero gradients leave parameters unchanged") {
    auto w = ad::parameter(Tensor<double>(Shape{1, 1, 1, 3}, 0.25));
    w.accumulate_grad(Tensor<double>(Shape{1, 1, 1, 3}));
    Adam<double> opt({{"w", w}});
    opt.step(1e-2);
    CHECK(w.value().storage() == std::vector<double>(3, 0.25));
  }
  SUBCASE("constant gradient moves by about lr per step") {
    auto w = ad::parameter(Tensor<double>::scalar(0.0));
    Adam<double> opt({{"w", w}});
    double prev = 0;
    for (int i = 0; i < 200; ++i) {
      w.zero_grad();
      w.accumulate_grad(Tensor<double>::scalar(3.0));
      opt.step(1e-3);
      const double step = prev - w.value()[0];
      prev = w.value()[0];
      CHECK(step == doctest::Approx(1e-3).epsilon(1e-6));
    }
    CHECK(opt.steps() == 200);
  }
  SUBCASE("one step decreases a quadratic") {
    auto w = ad::parameter(Tensor<double>::scalar(2.0));
    Adam<double> opt({{"w", w}});
    w.accumulate_grad(Tensor<double>::scalar(2 * 2.0));  // d/dw w^2
    opt.step(0.1);
    CHECK(w.value()[0] * w.value()[0] < 4.0);
  }
}

TEST_CASE("gradient clipping") {
  auto a = ad::parameter(Tensor<double>::scalar(0.0));
  auto b = ad::parameter(Tensor<double>::scalar(0.0));
  a.accumulate_grad(Tensor<double>::scalar(30.0));
  b.accumulate_grad(Tensor<double>::scalar(40.0));
  std::vector<NamedParameter<double>> ps{{"a", a}, {"b", b}};
  CHECK(global_grad_norm(ps) == doctest::Approx(50.0));
  CHECK(clip_gradients(ps, 100.0) == 1.0);
  CHECK(clip_gradients(ps, 5.0) == doctest::Approx(0.1));
  CHECK(a.grad()[0] == doctest::Approx(3.0));
  CHECK(global_grad_norm(ps) == doctest::Approx(5.0));
}

TEST_CASE("training is deterministic and logs CSV") {
  auto data = toy();
  Trainer<double> a(small_run()), b(small_run());
  std::ostringstream log_a, log_b;
  a.fit(data, &log_a, std::nullopt, 2);
  b.fit(data, &log_b, std::nullopt, 2);
  CHECK(flat_parameters(a) == flat_parameters(b));
  CHECK(log_a.str() == log_b.str());
  CHECK(log_a.str().rfind("step,loss_nats,bpd,lr,grad_norm\n0,", 0) == 0);
  CHECK(a.step() == 2);
  for (auto& f : a.flags()) CHECK(*f.value);
}

TEST_CASE("resuming from a checkpoint repeats the uninterrupted run") {
  auto data = toy();
  Trainer<double> full(small_run());
  std::ostringstream full_log;
  full.fit(data, &full_log, std::nullopt);

  Trainer<double> first(small_run());
  std::ostringstream head;
  first.fit(data, &head, std::nullopt, 3);
  auto ckpt = decode_checkpoint(encode_checkpoint(first.checkpoint()));
  auto resumed = Trainer<double>::from_checkpoint(ckpt);
  CHECK(resumed->step() == 3);
  std::ostringstream tail;
  resumed->fit(data, &tail, std::nullopt);
  CHECK(flat_parameters(*resumed) == flat_parameters(full));
  CHECK(head.str() + tail.str() == full_log.str());
  CHECK(encode_checkpoint(resumed->checkpoint()) == encode_checkpoint(full.checkpoint()));
}

TEST_CASE("checkpoint reproduces evaluation exactly") {
  auto data = toy();
  Trainer<double> t(small_run());
  t.fit(data, nullptr, std::nullopt, 3);
  auto copy = Trainer<double>::from_checkpoint(t.checkpoint());
  CHECK(evaluate_bpd(t, data, 1, 5) == evaluate_bpd(*copy, data, 1, 5));
  CHECK_THROWS_AS(Trainer<float>::from_checkpoint(t.checkpoint()), Error);
  Trainer<double> fresh(small_run());
  CHECK_THROWS_AS(evaluate_bpd(fresh, data, 1, 5), Error);
}

TEST_CASE("K = 1 evaluation equals the training loss on the same noise") {
  auto data = toy(4);
  auto cfg = small_run();
  cfg.train.batch_size = 4;
  Trainer<double> t(cfg);
  t.fit(data, nullptr, std::nullopt, 2);
  const auto x = data.all<double>();
  Rng noise_rng(99);
  const auto noise = t.dequantizer().draw_noise(x.shape(), noise_rng);
  ad::Tape<double> tape(ad::Recording::kOff);
  const double loss = nll_objective(tape, t.model(), t.dequantizer(), x, noise).loss.value()[0];
  Rng same(99);
  CHECK(t.evaluate(x, 1, same) == doctest::Approx(bits_per_dim(loss, 16)).epsilon(1e-12));
}

TEST_CASE("uniform mode loss is minus the model log-likelihood") {
  auto data = toy(4);
  Trainer<double> t(small_run(DequantMode::kUniform));
  t.fit(data, nullptr, std::nullopt, 1);
  const auto x = data.all<double>();
  Rng r(3);
  const auto noise = t.dequantizer().draw_noise(x.shape(), r);
  ad::Tape<double> tape(ad::Recording::kOff);
  auto obj = nll_objective(tape, t.model(), t.dequantizer(), x, noise);
  Tensor<double> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = dequantized_value(x[i], noise[i]);
  const auto lp = t.model().log_prob(y);
  for (std::size_t i = 0; i < 4; ++i) CHECK(obj.nll_nats[i] == -lp[i]);
}

TEST_CASE("non-finite steps are skipped") {
  auto data = toy();
  Trainer<double> t(small_run());
  t.fit(data, nullptr, std::nullopt, 1);
  auto params = t.parameters();
  params[0].var.mutable_value()[0] = std::numeric_limits<double>::quiet_NaN();
  const auto before = flat_parameters(t);
  auto log = t.train_step(data);
  CHECK(log.skipped);
  CHECK(t.skipped_steps() == 1);
  CHECK(t.step() == 2);
  const auto after = flat_parameters(t);
  for (std::size_t i = 1; i < before.size(); ++i) CHECK(before[i] == after[i]);
}
