#include <doctest.h>

#include <cmath>

#include "macow/masked_conv.hpp"
#include "macow/oracles.hpp"

using namespace macow;

namespace {

const Orientation kAll[] = {Orientation::kTop, Orientation::kBottom, Orientation::kLeft, Orientation::kRight};
const double kSigmoid2 = 1.0 / (1.0 + std::exp(-2.0));

FlowResult<double> run(FlowLayer<double>& layer, const Tensor<double>& x) {
  ad::Tape<double> tape(ad::Recording::kOff);
  return layer.forward(tape, ad::constant(x));
}

std::vector<double> mask_values(const MaskSpec& spec) { return build_mask<double>(spec).storage(); }

}  // namespace

TEST_CASE("mask layouts") {
  CHECK(mask_values(MaskSpec::make(Orientation::kTop)) == std::vector<double>{1, 1, 1, 1, 1, 0, 0, 0, 0, 0});
  CHECK(mask_values(MaskSpec::make(Orientation::kBottom)) == std::vector<double>{0, 0, 0, 0, 0, 1, 1, 1, 1, 1});
  auto left = MaskSpec::make(Orientation::kLeft);
  CHECK(left.kh == 5);
  CHECK(left.kw == 2);
  CHECK(mask_values(left) == std::vector<double>{1, 0, 1, 0, 1, 0, 1, 0, 1, 0});
  CHECK(mask_values(MaskSpec::make(Orientation::kRight)) == std::vector<double>{0, 1, 0, 1, 0, 1, 0, 1, 0, 1});
  for (auto o : kAll) {
    auto spec = MaskSpec::make(o, 3, 3);
    CHECK(build_mask<double>(spec)[spec.anchor.row * spec.kw + spec.anchor.col] == 0.0);
  }
  auto bad = MaskSpec::make(Orientation::kTop);
  bad.anchor = {2, 0};
  CHECK_THROWS_AS(build_mask<double>(bad), Error);
  bad.anchor = {0, 0};  // visible cell
  CHECK_THROWS_AS(build_mask<double>(bad), Error);
}

TEST_CASE("four orientations cover every direction") {
  const std::size_t h = 5, w = 5, centre = 2 * w + 2;
  std::vector<bool> reached(h * w, false);
  for (auto o : kAll) {
    auto field = oracle::declared_receptive_field(MaskSpec::make(o), h, w);
    for (std::size_t u = 0; u < h * w; ++u)
      if (field[centre * h * w + u]) reached[u] = true;
  }
  CHECK(reached[1 * w + 2]);
  CHECK(reached[3 * w + 2]);
  CHECK(reached[2 * w + 1]);
  CHECK(reached[2 * w + 3]);
  CHECK(!reached[centre]);
}

TEST_CASE("zero-initialized masked flow scales by sigmoid(2)") {
  Rng rng(1);
  auto x = normal_tensor<double>(Shape{2, 4, 5, 3}, rng);
  for (auto o : kAll) {
    MaskedConvFlow<double> mcf(3, MaskSpec::make(o));
    auto r = run(mcf, x);
    CHECK(r.logdet.value()[1] == doctest::Approx(4 * 5 * 3 * std::log(kSigmoid2)).epsilon(1e-13));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(r.y.value()[i] == doctest::Approx(kSigmoid2 * x[i]).epsilon(1e-14));
    auto back = mcf.inverse(r.y.value());
    CHECK(max_abs_diff(back, x) < 1e-14);
  }
}

TEST_CASE("single pixel only affects its forward cone") {
  Rng rng(2);
  MaskedConvFlow<double> mcf(1, MaskSpec::make(Orientation::kTop));
  mcf.randomize(rng, 0.5);
  Tensor<double> zero(Shape{1, 5, 5, 1});
  Tensor<double> one = zero;
  one.at(0, 2, 2, 0) = 1.0;
  auto base = run(mcf, zero).y.value();
  auto poke = run(mcf, one).y.value();
  auto field = oracle::declared_receptive_field(mcf.spec(), 5, 5);
  for (std::size_t t = 0; t < 25; ++t) {
    const bool may_change = t == 12 || field[t * 25 + 12];
    if (!may_change) CHECK(poke[t] == base[t]);
    else CHECK(poke[t] != base[t]);
  }
}

TEST_CASE("masked flow log-det matches dense Jacobian oracle") {
  Rng rng(3);
  for (auto o : kAll) {
    MaskedConvFlow<double> mcf(2, MaskSpec::make(o));
    mcf.randomize(rng, 0.4);
    auto x = normal_tensor<double>(Shape{1, 4, 4, 2}, rng);
    const double analytic = run(mcf, x).logdet.value()[0];
    const double brute = oracle::brute_force_logdet(oracle::layer_map(mcf, x.shape()), x.storage());
    CHECK(std::abs(analytic - brute) < 1e-6 * std::max(1.0, std::abs(brute)));
  }
}

TEST_CASE("slab inverse round-trips for every orientation") {
  Rng rng(4);
  for (auto kernel : {std::pair<std::size_t, std::size_t>{2, 5}, {2, 3}, {3, 3}}) {
    for (auto o : kAll) {
      MaskedConvFlow<double> mcf(3, MaskSpec::make(o, kernel.first, kernel.second));
      mcf.randomize(rng, 0.3);
      auto x = normal_tensor<double>(Shape{2, 6, 6, 3}, rng);
      CHECK(max_abs_diff(mcf.inverse(run(mcf, x).y.value()), x) < 1e-8);
    }
  }
}

TEST_CASE("slab inverse equals the sequential oracle and counts are linear") {
  Rng rng(5);
  for (auto o : kAll) {
    MaskedConvFlow<double> mcf(1, MaskSpec::make(o));
    mcf.randomize(rng, 0.5);
    auto y = run(mcf, normal_tensor<double>(Shape{1, 4, 6, 1}, rng)).y.value();
    mcf.reset_conv_applications();
    auto fast = mcf.inverse(y);
    std::size_t slow_count = 0;
    auto slow = oracle::sequential_inversion(y, mcf, &slow_count);
    CHECK(max_abs_diff(fast, slow) < 1e-10);
    CHECK(mcf.conv_applications() == (is_vertical(o) ? 4u : 6u));
    CHECK(slow_count == 24u);
  }
  MaskedConvFlow<double> ident(1, MaskSpec::make(Orientation::kTop));
  auto y = normal_tensor<double>(Shape{1, 4, 4, 1}, rng);
  auto x = oracle::sequential_inversion(y, ident);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(x[i] == doctest::Approx(y[i] / kSigmoid2).epsilon(1e-14));
}

TEST_CASE("Jacobian is triangular with the scale on its diagonal") {
  Rng rng(6);
  for (auto o : kAll) {
    MaskedConvFlow<double> mcf(1, MaskSpec::make(o));
    mcf.randomize(rng, 0.5);
    auto x = normal_tensor<double>(Shape{1, 4, 4, 1}, rng);
    auto jac = oracle::dense_jacobian(oracle::layer_map(mcf, x.shape()), x.storage());
    auto order = oracle::autoregressive_order(o, 4, 4);
    std::vector<std::size_t> rank(16);
    for (std::size_t k = 0; k < 16; ++k) rank[order[k]] = k;
    for (std::size_t t = 0; t < 16; ++t)
      for (std::size_t u = 0; u < 16; ++u)
        if (rank[u] > rank[t]) CHECK(jac[t * 16 + u] == 0.0);
    // y_t is affine in x_t, so a unit step in x_t exposes s(x_ctx) exactly.
    auto y = run(mcf, x).y.value();
    for (std::size_t t = 0; t < 16; ++t) {
      auto stepped = x;
      stepped[t] += 1.0;
      const double scale = run(mcf, stepped).y.value()[t] - y[t];
      CHECK(scale > 0.0);
      CHECK(jac[t * 16 + t] == doctest::Approx(scale).epsilon(1e-8));
    }
  }
}

TEST_CASE("mcf unit composes and inverts") {
  Rng rng(7);
  auto unit = make_mcf_unit<double>(3, 2, 5, Orientation::kLeft, Orientation::kRight);
  unit->randomize(rng, 0.3);
  auto x = normal_tensor<double>(Shape{2, 5, 4, 3}, rng);
  auto r = run(*unit, x);
  double parts = 0;
  Tensor<double> h = x;
  for (std::size_t i = 0; i < unit->size(); ++i) {
    auto ri = run(unit->layer(i), h);
    parts += ri.logdet.value()[0];
    h = ri.y.value();
  }
  CHECK(r.logdet.value()[0] == doctest::Approx(parts).epsilon(1e-13));
  CHECK(max_abs_diff(unit->inverse(r.y.value()), x) < 1e-8);
  CHECK_THROWS_AS(make_mcf_unit<double>(3, 2, 5, Orientation::kTop, Orientation::kTop), Error);
}

TEST_CASE("conditional masked flow uses its context") {
  Rng rng(8);
  MaskedConvFlow<double> mcf(2, MaskSpec::make(Orientation::kBottom), 3);
  mcf.randomize(rng, 0.4);
  auto x = normal_tensor<double>(Shape{2, 4, 4, 2}, rng);
  auto ctx = normal_tensor<double>(Shape{2, 4, 4, 3}, rng);
  ad::Tape<double> tape(ad::Recording::kOff);
  auto cv = ad::constant(ctx);
  auto r = mcf.forward(tape, ad::constant(x), &cv);
  CHECK(max_abs_diff(mcf.inverse(r.y.value(), &ctx), x) < 1e-10);
  CHECK_THROWS_AS(mcf.forward(tape, ad::constant(x)), Error);
}
