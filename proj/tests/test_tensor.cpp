#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "macow/conv.hpp"
#include "macow/linalg.hpp"
#include "macow/mcwt.hpp"
#include "macow/rng.hpp"
#include "macow/tensor.hpp"

using namespace macow;

namespace {

// Plain nested loops, "same" zero padding, centred 3x3 kernel, one channel.
double naive_conv_at(const Tensor<double>& x, const Tensor<double>& w, double bias, int i, int j) {
  double acc = bias;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      const int xi = i + a - 1, xj = j + b - 1;
      if (xi < 0 || xj < 0 || xi >= static_cast<int>(x.shape().h()) || xj >= static_cast<int>(x.shape().w())) continue;
      acc += x.at(0, xi, xj, 0) * w.at(a, b, 0, 0);
    }
  return acc;
}

}  // namespace

TEST_CASE("tensor construction validates data length") {
  CHECK_THROWS_AS(Tensor<double>(Shape{1, 2, 2, 1}, std::vector<double>(3)), Error);
  Tensor<float> t(Shape{2, 3, 4, 5}, 1.5f);
  CHECK(t.size() == 120);
  CHECK(t.shape().per_item() == 60);
  CHECK(t.at(1, 2, 3, 4) == 1.5f);
}

TEST_CASE("squeeze block order matches hand enumeration") {
  std::vector<double> iota(16);
  for (std::size_t k = 0; k < 16; ++k) iota[k] = static_cast<double>(k);
  Tensor<double> x(Shape{1, 4, 4, 1}, iota);
  auto y = squeeze2x2(x);
  CHECK(y.shape() == Shape{1, 2, 2, 4});
  const double expected[2][2][4] = {{{0, 1, 4, 5}, {2, 3, 6, 7}}, {{8, 9, 12, 13}, {10, 11, 14, 15}}};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t q = 0; q < 4; ++q) CHECK(y.at(0, i, j, q) == expected[i][j][q]);
  CHECK(unsqueeze2x2(y).storage() == x.storage());
  CHECK_THROWS_AS(squeeze2x2(Tensor<double>(Shape{1, 3, 4, 1})), Error);
}

TEST_CASE("squeeze shape and exact round trip with channels") {
  Rng rng(3);
  auto x = normal_tensor<double>(Shape{1, 4, 4, 2}, rng);
  auto y = squeeze2x2(x);
  CHECK(y.shape() == Shape{1, 2, 2, 8});
  CHECK(unsqueeze2x2(y).storage() == x.storage());
}

TEST_CASE("channel and batch slicing") {
  Rng rng(1);
  auto x = normal_tensor<double>(Shape{3, 2, 2, 5}, rng);
  auto a = slice_channels(x, 0, 3);
  auto b = slice_channels(x, 3, 5);
  CHECK(concat_channels(a, b).storage() == x.storage());
  auto parts = std::vector<Tensor<double>>{slice_batch(x, 0, 1), slice_batch(x, 1, 3)};
  CHECK(concat_batch(parts).storage() == x.storage());
}

TEST_CASE("conv2d trivial cases") {
  Rng rng(5);
  auto w = normal_tensor<double>(Shape{3, 3, 2, 3}, rng);
  Tensor<double> bias(Shape{1, 1, 1, 3}, std::vector<double>{0.5, -1.0, 2.0});
  Tensor<double> zeros(Shape{1, 4, 4, 2});
  auto out = conv2d_forward(zeros, w, &bias, nullptr, centered_anchor(3, 3));
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == bias[i % 3]);

  Tensor<double> eye(Shape{1, 1, 2, 2}, std::vector<double>{1, 0, 0, 1});
  auto x = normal_tensor<double>(Shape{2, 3, 3, 2}, rng);
  CHECK(conv2d_forward(x, eye, nullptr, nullptr, Anchor{}).storage() == x.storage());
}

TEST_CASE("conv2d matches nested-loop oracle") {
  // Frozen: x = 1..9, w = 0.1..0.9, bias 0.5.
  std::vector<double> xv(9), wv(9);
  for (int k = 0; k < 9; ++k) {
    xv[k] = k + 1;
    wv[k] = (k + 1) / 10.0;
  }
  Tensor<double> x(Shape{1, 3, 3, 1}, xv), w(Shape{3, 3, 1, 1}, wv);
  Tensor<double> bias(Shape{1, 1, 1, 1}, 0.5);
  auto out = conv2d_forward(x, w, &bias, nullptr, centered_anchor(3, 3));
  CHECK(out.at(0, 1, 1, 0) == doctest::Approx(29.0).epsilon(1e-14));
  CHECK(out.at(0, 0, 0, 0) == doctest::Approx(9.9).epsilon(1e-14));

  Rng rng(11);
  auto rx = normal_tensor<double>(Shape{1, 3, 3, 1}, rng);
  auto rw = normal_tensor<double>(Shape{3, 3, 1, 1}, rng);
  auto rout = conv2d_forward(rx, rw, &bias, nullptr, centered_anchor(3, 3));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(rout.at(0, i, j, 0) == doctest::Approx(naive_conv_at(rx, rw, 0.5, i, j)).epsilon(1e-13));
}

TEST_CASE("conv2d rejects bad masks and shapes") {
  Tensor<double> x(Shape{1, 3, 3, 2});
  Tensor<double> w(Shape{3, 3, 1, 1});
  CHECK_THROWS_AS(conv2d_forward(x, w, nullptr, nullptr, centered_anchor(3, 3)), Error);
  Tensor<double> w2(Shape{3, 3, 2, 1});
  Tensor<double> mask(Shape{3, 3, 1, 1}, 0.5);
  try {
    conv2d_forward(x, w2, nullptr, &mask, centered_anchor(3, 3));
    FAIL("expected validation error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kValidation);
  }
}

TEST_CASE("masked conv taps have exactly zero influence") {
  Rng rng(2);
  auto w = normal_tensor<double>(Shape{3, 3, 1, 1}, rng);
  Tensor<double> mask(Shape{3, 3, 1, 1}, 1.0);
  mask[4] = 0;  // centre
  mask[5] = 0;  // right of centre
  auto x = normal_tensor<double>(Shape{1, 3, 3, 1}, rng);
  auto base = conv2d_forward(x, w, nullptr, &mask, centered_anchor(3, 3));
  auto poked = x;
  poked.at(0, 1, 1, 0) += 3.0;
  poked.at(0, 1, 2, 0) -= 7.0;
  auto out = conv2d_forward(poked, w, nullptr, &mask, centered_anchor(3, 3));
  CHECK(out.at(0, 1, 1, 0) == base.at(0, 1, 1, 0));
}

TEST_CASE("MCWT header layout and round trip") {
  Tensor<float> t(Shape{1, 1, 1, 2}, std::vector<float>{1.0f, -2.0f});
  auto bytes = encode_mcwt(to_mcwt(t));
  REQUIRE(bytes.size() == 4 + 3 + 4 * 8 + 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MCWT");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 4);
  CHECK(bytes[7 + 24] == 2);  // last extent, little-endian
  ByteReader reader(bytes);
  auto back = from_mcwt<float>(decode_mcwt(reader));
  CHECK(back.storage() == t.storage());
  CHECK_THROWS_AS(from_mcwt<double>(to_mcwt(t)), Error);

  auto path = std::filesystem::temp_directory_path() / "macow_test_tensor.mcwt";
  Tensor<std::uint8_t> u(Shape{2, 2, 2, 1}, std::vector<std::uint8_t>{0, 1, 2, 3, 250, 251, 252, 255});
  save_tensor(path, u);
  CHECK(load_tensor<std::uint8_t>(path).storage() == u.storage());
  std::filesystem::remove(path);
}

TEST_CASE("LU log-determinant and inverse") {
  linalg::LuDecomposition<double> lu({2, 0, 0, 3}, 2);
  CHECK(lu.log_abs_det() == doctest::Approx(std::log(6.0)));
  linalg::LuDecomposition<double> swap({0, 1, 1, 0}, 2);
  CHECK(swap.log_abs_det() == doctest::Approx(0.0));
  CHECK(swap.det_sign() == -1.0);
  auto inv = linalg::LuDecomposition<double>({4, 7, 2, 6}, 2).inverse();
  CHECK(inv[0] == doctest::Approx(0.6));
  CHECK(inv[1] == doctest::Approx(-0.7));
  CHECK(inv[2] == doctest::Approx(-0.2));
  CHECK(inv[3] == doctest::Approx(0.4));
  CHECK_THROWS_AS(linalg::LuDecomposition<double>({1, 2, 2, 4}, 2).log_abs_det(), Error);
}
