#include <doctest.h>

#include <cmath>

#include "macow/flow_layers.hpp"
#include "macow/oracles.hpp"

using namespace macow;

namespace {

const double kLogSigmoid2 = std::log(1.0 / (1.0 + std::exp(-2.0)));

FlowResult<double> run(FlowLayer<double>& layer, const Tensor<double>& x) {
  ad::Tape<double> tape(ad::Recording::kOff);
  return layer.forward(tape, ad::constant(x));
}

double logdet_error(FlowLayer<double>& layer, const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  auto x = normal_tensor<double>(shape, rng);
  const double analytic = run(layer, x).logdet.value()[0];
  const double brute = oracle::brute_force_logdet(oracle::layer_map(layer, shape), x.storage());
  return std::abs(analytic - brute) / std::max(1.0, std::abs(brute));
}

double round_trip_error(FlowLayer<double>& layer, const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  auto x = normal_tensor<double>(shape, rng);
  return max_abs_diff(layer.inverse(run(layer, x).y.value()), x);
}

}  // namespace

TEST_CASE("actnorm known values") {
  ActNorm<double> identity(2, false);
  Rng rng(1);
  auto x = normal_tensor<double>(Shape{1, 2, 2, 2}, rng);
  auto r = run(identity, x);
  CHECK(r.y.value().storage() == x.storage());
  CHECK(r.logdet.value()[0] == 0.0);

  ActNorm<double> doubled(2, false);
  doubled.set_parameters(Tensor<double>(Shape{1, 1, 1, 2}, 2.0), Tensor<double>(Shape{1, 1, 1, 2}));
  CHECK(run(doubled, x).logdet.value()[0] == doctest::Approx(5.5452).epsilon(1e-4));
  CHECK(run(doubled, x).logdet.value()[0] == doctest::Approx(8 * std::log(2.0)).epsilon(1e-14));
  CHECK(max_abs_diff(doubled.inverse(run(doubled, x).y.value()), x) < 1e-15);
}

TEST_CASE("actnorm data-dependent init normalizes the batch") {
  ActNorm<double> an(3);
  Rng rng(2);
  auto x = normal_tensor<double>(Shape{4, 3, 3, 3}, rng, 5.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += static_cast<double>(i % 3);
  auto y = run(an, x).y.value();
  CHECK(an.initialized());
  for (std::size_t k = 0; k < 3; ++k) {
    double m = 0, v = 0;
    const std::size_t rows = y.size() / 3;
    for (std::size_t r = 0; r < rows; ++r) m += y[r * 3 + k];
    m /= rows;
    for (std::size_t r = 0; r < rows; ++r) v += (y[r * 3 + k] - m) * (y[r * 3 + k] - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(v / rows == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("actnorm zero-variance channel is floored, zero scale rejected") {
  ActNorm<double> an(1);
  auto r = run(an, Tensor<double>(Shape{2, 2, 2, 1}, 3.0));
  CHECK(an.scale()[0] == doctest::Approx(1e6));
  CHECK(std::isfinite(r.logdet.value()[0]));
  ActNorm<double> bad(1, false);
  bad.set_parameters(Tensor<double>(Shape{1, 1, 1, 1}, 0.0), Tensor<double>(Shape{1, 1, 1, 1}));
  try {
    run(bad, Tensor<double>(Shape{1, 1, 1, 1}, 1.0));
    FAIL("expected invertibility error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvertibility);
  }
}

TEST_CASE("invertible 1x1 known values") {
  Rng rng(3);
  auto x = normal_tensor<double>(Shape{1, 2, 2, 2}, rng);
  Invertible1x1<double> eye(2, std::vector<double>{1, 0, 0, 1});
  CHECK(run(eye, x).y.value().storage() == x.storage());
  CHECK(run(eye, x).logdet.value()[0] == 0.0);

  Invertible1x1<double> swap(2, std::vector<double>{0, 1, 1, 0});
  auto ys = run(swap, x);
  for (std::size_t p = 0; p < 4; ++p) {
    CHECK(ys.y.value()[2 * p] == x[2 * p + 1]);
    CHECK(ys.y.value()[2 * p + 1] == x[2 * p]);
  }
  CHECK(std::abs(ys.logdet.value()[0]) < 1e-15);
  CHECK(swap.inverse(ys.y.value()).storage() == x.storage());

  Invertible1x1<double> diag(2, std::vector<double>{2, 0, 0, 3});
  CHECK(run(diag, x).logdet.value()[0] == doctest::Approx(7.1670).epsilon(1e-4));
  CHECK(run(diag, x).logdet.value()[0] == doctest::Approx(4 * std::log(6.0)).epsilon(1e-14));

  Invertible1x1<double> singular(2, std::vector<double>{1, 2, 2, 4});
  CHECK_THROWS_AS(run(singular, x), Error);
}

TEST_CASE("coupling at zero init") {
  Rng rng(4);
  Coupling<double> affine(4, 8, CouplingMode::kAffine, rng);
  auto x = normal_tensor<double>(Shape{2, 3, 3, 4}, rng);
  auto r = run(affine, x);
  CHECK(r.logdet.value()[0] == doctest::Approx(9 * 2 * kLogSigmoid2).epsilon(1e-13));
  const double s2 = 1.0 / (1.0 + std::exp(-2.0));
  CHECK(s2 == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(r.y.value().at(1, 2, 1, 3) == doctest::Approx(s2 * x.at(1, 2, 1, 3)).epsilon(1e-14));
  CHECK(r.y.value().at(1, 2, 1, 1) == x.at(1, 2, 1, 1));

  Coupling<double> additive(4, 8, CouplingMode::kAdditive, rng);
  additive.randomize(rng, 0.5);
  auto ra = run(additive, x);
  CHECK(ra.logdet.value()[0] == 0.0);
  CHECK(ra.logdet.value()[1] == 0.0);
}

TEST_CASE("coupling with odd channel count keeps the larger half") {
  Rng rng(5);
  Coupling<double> c(3, 4, CouplingMode::kAffine, rng);
  CHECK(c.kept_channels() == 2);
  c.randomize(rng, 0.3);
  CHECK(round_trip_error(c, Shape{2, 4, 4, 3}, 6) < 1e-12);
  CHECK_THROWS_AS(Coupling<double>(1, 4, CouplingMode::kAffine, rng), Error);
}

TEST_CASE("squeeze layer shape and round trip") {
  Squeeze<double> sq;
  CHECK(sq.output_shape(Shape{1, 4, 4, 2}) == Shape{1, 2, 2, 8});
  CHECK(round_trip_error(sq, Shape{1, 4, 4, 2}, 7) == 0.0);
  CHECK_THROWS_AS(sq.output_shape(Shape{1, 3, 4, 2}), Error);
}

TEST_CASE("split prior") {
  SplitPrior<double> split(8, 4);
  CHECK(split.kept_channels() == 4);
  Tensor<double> zero(Shape{1, 1, 1, 8});
  ad::Tape<double> tape(ad::Recording::kOff);
  auto r = split.forward(tape, ad::constant(zero));
  CHECK(r.log_prob.value()[0] == doctest::Approx(-4 * 0.5 * std::log(2 * M_PI)).epsilon(1e-14));
  CHECK(-0.5 * std::log(2 * M_PI) == doctest::Approx(-0.9189).epsilon(1e-4));
  Rng rng(8);
  auto x = normal_tensor<double>(Shape{2, 3, 3, 8}, rng);
  auto rr = split.forward(tape, ad::constant(x));
  CHECK(split.inverse(rr.kept.value(), rr.z.value()).storage() == x.storage());
  CHECK_THROWS_AS(SplitPrior<double>(4, 4), Error);
  CHECK_THROWS_AS(SplitPrior<double>(4, 0), Error);

  auto mode = split.sample(rr.kept.value(), 0.0, rng);
  for (double v : mode.data()) CHECK(v == 0.0);
}

TEST_CASE("every layer round-trips over random parameterizations") {
  Rng rng(9);
  const Shape shape{2, 4, 4, 4};
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    ActNorm<double> an(4);
    an.randomize(rng, 0.5);
    Invertible1x1<double> inv(4, rng);
    inv.randomize(rng, 0.3);
    Coupling<double> aff(4, 6, CouplingMode::kAffine, rng);
    aff.randomize(rng, 0.3);
    Coupling<double> add(4, 6, CouplingMode::kAdditive, rng);
    add.randomize(rng, 0.3);
    Squeeze<double> sq;
    for (FlowLayer<double>* l : std::initializer_list<FlowLayer<double>*>{&an, &inv, &aff, &add, &sq})
      worst = std::max(worst, round_trip_error(*l, shape, 1000 + trial));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("analytic log-det matches the dense Jacobian oracle") {
  Rng rng(10);
  const Shape shape{1, 3, 3, 2};
  ActNorm<double> an(2);
  an.randomize(rng, 0.5);
  CHECK(logdet_error(an, shape, 1) < 1e-6);
  Invertible1x1<double> inv(2, rng);
  inv.randomize(rng, 0.4);
  CHECK(logdet_error(inv, shape, 2) < 1e-6);
  Coupling<double> aff(2, 4, CouplingMode::kAffine, rng);
  aff.randomize(rng, 0.5);
  CHECK(logdet_error(aff, Shape{1, 2, 2, 2}, 3) < 1e-6);
  CHECK(logdet_error(aff, shape, 4) < 1e-6);
  Coupling<double> add(2, 4, CouplingMode::kAdditive, rng);
  add.randomize(rng, 0.5);
  CHECK(logdet_error(add, shape, 5) < 1e-6);
}

TEST_CASE("brute force log-det known maps") {
  auto twice = [](const std::vector<double>& v) {
    auto o = v;
    for (auto& e : o) e *= 2;
    return o;
  };
  CHECK(oracle::brute_force_logdet(twice, {1, 2, 3, 4}) == doctest::Approx(4 * std::log(2.0)).epsilon(1e-10));
  auto perm = [](const std::vector<double>& v) { return std::vector<double>{v[2], v[0], v[3], v[1]}; };
  CHECK(std::abs(oracle::brute_force_logdet(perm, {1, 2, 3, 4})) < 1e-10);
  auto collapse = [](const std::vector<double>& v) { return std::vector<double>{v[0], v[0]}; };
  CHECK_THROWS_AS(oracle::brute_force_logdet(collapse, {1, 2}), Error);
}

TEST_CASE("log-det is additive under composition") {
  Rng rng(11);
  std::vector<std::unique_ptr<FlowLayer<double>>> layers;
  auto an = std::make_unique<ActNorm<double>>(2);
  an->randomize(rng, 0.5);
  auto cp = std::make_unique<Coupling<double>>(2, 4, CouplingMode::kAffine, rng);
  cp->randomize(rng, 0.5);
  auto* an_ptr = an.get();
  auto* cp_ptr = cp.get();
  layers.push_back(std::move(an));
  layers.push_back(std::move(cp));
  Sequential<double> seq(LayerKind::kMcfUnit, std::move(layers), {"a", "b"});
  auto x = normal_tensor<double>(Shape{1, 3, 3, 2}, rng);
  const double total = run(seq, x).logdet.value()[0];
  auto mid = run(*an_ptr, x);
  const double parts = mid.logdet.value()[0] + run(*cp_ptr, mid.y.value()).logdet.value()[0];
  CHECK(total == doctest::Approx(parts).epsilon(1e-14));
  const double brute = oracle::brute_force_logdet(oracle::layer_map(seq, x.shape()), x.storage());
  CHECK(std::abs(total - brute) < 1e-6 * std::max(1.0, std::abs(brute)));
}
