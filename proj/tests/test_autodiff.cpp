#include <doctest.h>

#include <cmath>
#include <functional>

#include "macow/autodiff.hpp"
#include "macow/gradcheck.hpp"
#include "macow/rng.hpp"

using namespace macow;
using ad::Tape;
using ad::Var;

namespace {

using Op = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// Gradients of sum(op(inputs) * probe) against central differences, one input at a time.
double worst_grad_error(const Op& op, const std::vector<Tensor<double>>& inputs, std::uint64_t seed = 99) {
  Tape<double> probe_tape(ad::Recording::kOff);
  std::vector<Var<double>> consts;
  for (const auto& t : inputs) consts.push_back(ad::constant(t));
  Rng rng(seed);
  const Tensor<double> probe = normal_tensor<double>(op(probe_tape, consts).shape(), rng);

  auto loss_of = [&](const std::vector<Tensor<double>>& values) {
    Tape<double> tape(ad::Recording::kOff);
    std::vector<Var<double>> vars;
    for (const auto& t : values) vars.push_back(ad::constant(t));
    auto out = ad::mul(tape, op(tape, vars), ad::constant(probe));
    return ad::sum(tape, out).value().item();
  };

  Tape<double> tape;
  std::vector<Var<double>> params;
  for (const auto& t : inputs) params.push_back(ad::parameter(t));
  auto loss = ad::sum(tape, ad::mul(tape, op(tape, params), ad::constant(probe)));
  tape.backward(loss);

  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor<double>& x) {
      auto values = inputs;
      values[k] = x;
      return loss_of(values);
    };
    auto numeric = finite_diff_grad<double>(f, inputs[k]);
    worst = std::max(worst, max_relative_error(params[k].grad(), numeric, 1e-4));
  }
  return worst;
}

Tensor<double> randn(const Shape& s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return normal_tensor<double>(s, rng, scale);
}

Tensor<double> positive(const Shape& s, std::uint64_t seed) {
  Rng rng(seed);
  return uniform_tensor<double>(s, rng, 0.5, 2.0);
}

}  // namespace

TEST_CASE("elementwise identities") {
  Tape<double> tape(ad::Recording::kOff);
  auto x = ad::constant(positive(Shape{2, 2, 2, 3}, 1));
  auto ones = ad::constant(Tensor<double>(x.shape(), 1.0));
  CHECK(ad::mul(tape, x, ones).value().storage() == x.value().storage());
  auto round = ad::exp(tape, ad::log(tape, x));
  CHECK(max_abs_diff(round.value(), x.value()) < 1e-12);
  auto e = ad::elu(tape, ad::constant(Tensor<double>::scalar(-1.0)));
  CHECK(e.value().item() == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
  CHECK(e.value().item() == doctest::Approx(-0.6321).epsilon(1e-4));
}

TEST_CASE("division by zero and broadcasting errors") {
  Tape<double> tape(ad::Recording::kOff);
  auto a = ad::constant(Tensor<double>(Shape{1, 1, 1, 2}, 1.0));
  auto b = ad::constant(Tensor<double>(Shape{1, 1, 1, 2}, std::vector<double>{1.0, 0.0}));
  CHECK_THROWS_AS(ad::div(tape, a, b), Error);
  auto c = ad::constant(Tensor<double>(Shape{1, 1, 1, 3}, 1.0));
  CHECK_THROWS_AS(ad::add(tape, a, c), Error);
  CHECK_THROWS_AS(ad::log(tape, ad::constant(Tensor<double>::scalar(-1.0))), Error);
}

TEST_CASE("reductions") {
  Tape<double> tape(ad::Recording::kOff);
  auto ones = ad::constant(Tensor<double>(Shape{1, 2, 2, 3}, 1.0));
  CHECK(ad::sum(tape, ones).value().item() == 12.0);
  auto c = ad::constant(Tensor<double>(Shape{2, 3, 1, 2}, 4.25));
  CHECK(ad::mean(tape, c).value().item() == 4.25);
  auto z = ad::constant(Tensor<double>(Shape{1, 1, 1, 2}, 0.0));
  CHECK(ad::reduce(tape, z, ad::Reduction::kLogSumExp, ad::Axes::all()).value().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  auto per = ad::sum(tape, c, ad::Axes::per_item());
  CHECK(per.shape() == Shape{2, 1, 1, 1});
  CHECK(per.value()[0] == doctest::Approx(4.25 * 6));
  CHECK_THROWS_AS(ad::Axes::of({4}), Error);
}

TEST_CASE("backward basics") {
  Tape<double> tape;
  auto x = ad::parameter(randn(Shape{1, 2, 2, 3}, 2));
  tape.backward(ad::sum(tape, x));
  for (double g : x.grad().data()) CHECK(g == 1.0);

  Tape<double> tape2;
  auto y = ad::parameter(randn(Shape{1, 2, 2, 3}, 3));
  tape2.backward(ad::sum(tape2, ad::mul(tape2, y, y)));
  for (std::size_t i = 0; i < y.value().size(); ++i) CHECK(y.grad()[i] == doctest::Approx(2 * y.value()[i]));
}

TEST_CASE("backward rejects misuse") {
  Tape<double> tape;
  auto x = ad::parameter(randn(Shape{1, 2, 2, 1}, 4));
  auto sq = ad::square(tape, x);
  CHECK_THROWS_AS(tape.backward(sq), Error);  // not a scalar
  auto loss = ad::sum(tape, sq);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), Error);  // second sweep without reset

  Tape<double> other;
  CHECK_THROWS_AS(other.backward(ad::constant(Tensor<double>::scalar(1.0))), Error);  // detached
  Tape<double> third, fourth;
  auto foreign = ad::sum(fourth, ad::square(fourth, x));
  CHECK_THROWS_AS(third.backward(foreign), Error);  // recorded elsewhere
  auto z = ad::parameter(Tensor<double>::scalar(1.0));
  CHECK_THROWS_AS(ad::add(third, ad::square(fourth, z), ad::square(third, z)), Error);
}

TEST_CASE("gradients accumulate additively across uses") {
  Tape<double> tape;
  auto x = ad::parameter(Tensor<double>::scalar(3.0));
  auto loss = ad::add(tape, ad::mul(tape, x, x), ad::mul_scalar(tape, x, 5.0));
  tape.backward(loss);
  CHECK(x.grad().item() == doctest::Approx(11.0));
}

TEST_CASE("finite_diff_grad basics") {
  auto x = randn(Shape{1, 2, 2, 2}, 5);
  auto g = finite_diff_grad<double>([](const Tensor<double>& t) {
    double s = 0;
    for (double v : t.data()) s += v;
    return s;
  }, x);
  for (double v : g.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  auto sq = finite_diff_grad<double>([](const Tensor<double>& t) { return t[0] * t[0]; }, Tensor<double>::scalar(3.0));
  CHECK(std::abs(sq.item() - 6.0) < 1e-8);
  int calls = 0;
  CHECK_THROWS_AS(finite_diff_grad<double>([&calls](const Tensor<double>&) { return double(++calls); },
                                           Tensor<double>::scalar(1.0)),
                  Error);
}

TEST_CASE("every differentiable op matches finite differences") {
  const Shape s{2, 4, 4, 3};
  const Shape chan{1, 1, 1, 3};
  const double tol = 1e-5;
  auto a = randn(s, 10), b = randn(s, 11), p = positive(s, 12);

  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::add(t, v[0], v[1]); }, {a, randn(chan, 13)}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::sub(t, v[0], v[1]); }, {a, b}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::mul(t, v[0], v[1]); }, {a, randn(chan, 14)}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::div(t, v[0], v[1]); }, {a, p}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::neg(t, v[0]); }, {a}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::exp(t, v[0]); }, {a}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::log(t, v[0]); }, {p}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::log_abs(t, v[0]); }, {p}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::sigmoid(t, v[0]); }, {a}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::log_sigmoid(t, v[0]); }, {a}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::elu(t, v[0]); }, {a}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::square(t, v[0]); }, {a}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::affine(t, v[0], v[1], v[2]); },
                         {a, randn(chan, 15), randn(chan, 16)}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::add_scalar(t, v[0], 2.5); }, {a}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::mul_scalar(t, v[0], -1.5); }, {a}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::clamp(t, v[0], -0.5, 0.5); }, {a}) < tol);
  for (auto r : {ad::Reduction::kSum, ad::Reduction::kMean, ad::Reduction::kLogSumExp}) {
    CHECK(worst_grad_error([r](auto& t, auto& v) { return ad::reduce(t, v[0], r, ad::Axes::of({1, 3})); }, {a}) < tol);
    CHECK(worst_grad_error([r](auto& t, auto& v) { return ad::reduce(t, v[0], r, ad::Axes::all()); }, {a}) < tol);
  }
  auto mask = std::make_shared<const Tensor<double>>(Shape{2, 3, 1, 1}, std::vector<double>{1, 1, 1, 0, 0, 0});
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::conv2d(t, v[0], v[1], v[2], nullptr, centered_anchor(3, 3)); },
                         {a, randn(Shape{3, 3, 3, 2}, 17), randn(Shape{1, 1, 1, 2}, 18)}) < tol);
  CHECK(worst_grad_error([mask](auto& t, auto& v) { return ad::conv2d(t, v[0], v[1], Var<double>(), mask, Anchor{1, 1}); },
                         {a, randn(Shape{2, 3, 3, 3}, 19)}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::slice_channels(t, v[0], 1, 3); }, {a}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::concat_channels(t, v[0], v[1]); }, {a, b}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::squeeze2x2(t, v[0]); }, {a}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::unsqueeze2x2(t, v[0]); }, {randn(Shape{2, 2, 2, 4}, 20)}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::channel_matmul(t, v[0], v[1]); },
                         {a, randn(Shape{1, 1, 3, 3}, 21)}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::log_abs_det(t, v[0]); }, {randn(Shape{1, 1, 3, 3}, 22)}) < tol);
  CHECK(worst_grad_error([](auto& t, auto& v) { return ad::gaussian_log_density(t, v[0], v[1], v[2]); },
                         {a, randn(chan, 23), randn(chan, 24, 0.3)}) < tol);
}

TEST_CASE("two-layer conv net gradient matches finite differences") {
  auto x = randn(Shape{2, 4, 4, 2}, 30);
  auto w1 = randn(Shape{3, 3, 2, 3}, 31, 0.5), w2 = randn(Shape{3, 3, 3, 1}, 32, 0.5);
  auto b1 = randn(Shape{1, 1, 1, 3}, 33), b2 = randn(Shape{1, 1, 1, 1}, 34);
  auto net = [](auto& t, auto& v) {
    auto h = ad::elu(t, ad::conv2d(t, v[0], v[1], v[2], nullptr, centered_anchor(3, 3)));
    return ad::sum(t, ad::conv2d(t, h, v[3], v[4], nullptr, centered_anchor(3, 3)));
  };
  CHECK(worst_grad_error(net, {x, w1, b1, w2, b2}) < 1e-5);
}

TEST_CASE("no-record tape evaluates without storing") {
  Tape<double> tape(ad::Recording::kOff);
  auto x = ad::parameter(randn(Shape{1, 2, 2, 1}, 40));
  auto y = ad::sum(tape, ad::exp(tape, x));
  CHECK(tape.size() == 0);
  CHECK(std::isfinite(y.value().item()));
}

TEST_CASE("ops are bit-deterministic") {
  auto x = randn(Shape{2, 4, 4, 3}, 50);
  auto w = randn(Shape{3, 3, 3, 3}, 51);
  auto run = [&] {
    Tape<double> tape(ad::Recording::kOff);
    auto h = ad::conv2d(tape, ad::constant(x), ad::constant(w), Var<double>(), nullptr, centered_anchor(3, 3));
    return ad::reduce(tape, ad::sigmoid(tape, h), ad::Reduction::kLogSumExp, ad::Axes::per_item()).value().storage();
  };
  CHECK(run() == run());
}
