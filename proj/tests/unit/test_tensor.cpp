#include <cmath>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "svmixer/config.hpp"
#include "svmixer/errors.hpp"
#include "svmixer/ops.hpp"

using namespace svmixer;
using svmixer::test::random_tensor;

namespace {

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t iterate_frames(std::size_t len) {
  const std::size_t k[] = {10, 3, 3, 3, 3, 2, 2};
  const std::size_t s[] = {5, 2, 2, 2, 2, 2, 2};
  for (int i = 0; i < 7; ++i) {
    if (len < k[i]) return 0;
    len = (len - k[i]) / s[i] + 1;
  }
  return len;
}

}  // namespace

TEST_CASE("tensor shape and data must agree") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(shape_numel(t.shape()) == t.numel());
  CHECK_THROWS_AS(t.reshaped({4}), DimensionError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
}

TEST_CASE("matmul examples") {
  const Tensor a = random_tensor({3, 4}, 1);
  CHECK(bitwise_equal(ops::matmul(identity(3), a), a));

  const Tensor c = ops::matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{0}, {1}}));
  CHECK(c == Tensor::matrix({{2}, {4}}));

  const Tensor x = random_tensor({5, 7}, 2), y = random_tensor({7, 3}, 3);
  const Tensor got = ops::matmul(x, y);
  Tensor want({5, 3});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) s += x.at(i, k) * y.at(k, j);
      want.at(i, j) = s;
    }
  CHECK(max_abs_diff(got, want) <= 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    ops::matmul(Tensor({2, 3}), Tensor({4, 2}));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul with identity is bitwise associative") {
  const Tensor a = random_tensor({4, 5}, 4), b = random_tensor({5, 3}, 5);
  CHECK(bitwise_equal(ops::matmul(ops::matmul(a, identity(5)), b), ops::matmul(a, b)));
}

TEST_CASE("conv1d examples") {
  const Tensor x = Tensor::vector({1, 1, 1, 1}).reshaped({1, 4});
  const Tensor k = Tensor::vector({1, 1}).reshaped({1, 1, 2});
  CHECK(ops::conv1d(x, k, 2, 1) == Tensor::matrix({{2, 2}}));

  CHECK(iterate_frames(48000) == 149);
  CHECK(iterate_frames(16000) == 49);
  const EncoderConfig cfg;
  CHECK(frames_for_samples(cfg, 48000) == 149);
  CHECK(frames_for_samples(cfg, 16000) == 49);
  for (std::size_t n : {399, 400, 719, 720, 12345, 48000, 48319, 48320})
    CHECK(frames_for_samples(cfg, n) == iterate_frames(n));
  CHECK(samples_for_frames(cfg, 1) == 400);
  CHECK(frames_for_samples(cfg, samples_for_frames(cfg, 149)) == 149);
  CHECK(frames_for_samples(cfg, samples_for_frames(cfg, 149) - 1) == 148);
}

TEST_CASE("conv1d errors") {
  try {
    ops::conv1d(Tensor({1, 2}), Tensor({1, 1, 3}), 1, 1);
    FAIL("expected an error");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("sequence shorter than kernel") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::conv1d(Tensor({3, 5}), Tensor({2, 1, 1}), 1, 2), DimensionError);
}

TEST_CASE("conv1d with k=1 equals a per-frame matmul") {
  const Tensor x = random_tensor({3, 6}, 6);      // [C_in x T]
  const Tensor w = random_tensor({4, 3, 1}, 7);   // [C_out x C_in x 1]
  const Tensor y = ops::conv1d(x, w, 1, 1);
  const Tensor w2 = w.reshaped({4, 3});
  CHECK(max_abs_diff(y, ops::matmul(w2, x)) <= 1e-12);
}

TEST_CASE("grouped conv matches per-group convolution") {
  const Tensor x = random_tensor({4, 9}, 8);
  const Tensor w = random_tensor({4, 2, 3}, 9);
  const Tensor y = ops::conv1d(x, w, 2, 2);
  for (std::size_t o = 0; o < 4; ++o) {
    const std::size_t g = o / 2;
    for (std::size_t t = 0; t < y.cols(); ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t j = 0; j < 3; ++j) s += w[(o * 2 + c) * 3 + j] * x.at(g * 2 + c, 2 * t + j);
      CHECK(y.at(o, t) == doctest::Approx(s).epsilon(1e-14));
    }
  }
}

TEST_CASE("avg_pool1d examples") {
  CHECK(ops::avg_pool1d(Tensor::matrix({{1, 3, 5, 7}})) == Tensor::matrix({{2, 6}}));
  const Tensor c = ops::avg_pool1d(Tensor({2, 9}, 0.25));
  CHECK(c.shape() == Shape{2, 4});
  for (double v : c.data()) CHECK(v == 0.25);
  CHECK(ops::avg_pool1d(Tensor({1, 149})).cols() == 74);
  CHECK_THROWS(ops::avg_pool1d(Tensor({1, 1})));
}

TEST_CASE("linear_upsample examples") {
  const double a = 0.37;
  const Tensor u = ops::linear_upsample(Tensor::matrix({{a, a}}), 5);
  for (double v : u.data()) CHECK(v == a);
  CHECK(ops::linear_upsample(Tensor::matrix({{0, 2}}), 3) == Tensor::matrix({{0, 1, 2}}));
  CHECK_THROWS(ops::linear_upsample(Tensor::matrix({{0, 2}}), 0));

  const Tensor x = random_tensor({3, 74}, 10);
  const Tensor y = ops::linear_upsample(x, 149);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 149; ++i) {
      const double pos = double(i) * 73.0 / 148.0;
      const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min<std::size_t>(lo + 1, 73);
      const double w = pos - double(lo);
      const double want = (1 - w) * x.at(c, lo) + w * x.at(c, hi);
      CHECK(std::abs(y.at(c, i) - want) <= 1e-12);
    }
  // Single source frame broadcasts.
  const Tensor b = ops::linear_upsample(Tensor::matrix({{4.0}}), 3);
  CHECK(b == Tensor::matrix({{4, 4, 4}}));
}

TEST_CASE("pool then upsample of a constant signal is the identity") {
  for (std::size_t t : {2, 3, 8, 9, 149}) {
    const Tensor x({3, t}, -1.75);
    CHECK(bitwise_equal(ops::linear_upsample(ops::avg_pool1d(x), t), x));
  }
}

TEST_CASE("gelu examples") {
  CHECK(ops::gelu(0.0) == 0.0);
  CHECK(std::abs(ops::gelu(-10.0)) <= 1e-6);
  CHECK(std::abs(ops::gelu(10.0) - 10.0) <= 1e-6);
  // Phi(1) to 16 digits.
  CHECK(std::abs(ops::gelu(1.0) - 0.8413447460685429) <= 1e-15);
  CHECK(ops::gelu_derivative(0.0) == 0.5);
}

TEST_CASE("layer_norm examples") {
  const Tensor g({5}, 1.0), b({5}, 0.0);
  const Tensor c = ops::layer_norm(Tensor({2, 5}, 3.0), g, b);
  for (double v : c.data()) CHECK(v == 0.0);

  const Tensor x = random_tensor({4, 8}, 11, -3, 5);
  const Tensor y = ops::layer_norm(x, Tensor({8}, 1.0), Tensor({8}));
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c2 = 0; c2 < 8; ++c2) mean += y.at(r, c2);
    mean /= 8;
    for (std::size_t c2 = 0; c2 < 8; ++c2) var += (y.at(r, c2) - mean) * (y.at(r, c2) - mean);
    var /= 8;
    CHECK(std::abs(mean) <= 1e-10);
    CHECK(std::abs(var - 1.0) <= 1e-4);  // eps = 1e-5 shrinks the variance slightly
  }

  const Tensor gg = random_tensor({8}, 12), bb = random_tensor({8}, 13);
  const Tensor got = ops::layer_norm(x, gg, bb);
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c2 = 0; c2 < 8; ++c2) mean += x.at(r, c2);
    mean /= 8;
    for (std::size_t c2 = 0; c2 < 8; ++c2) var += (x.at(r, c2) - mean) * (x.at(r, c2) - mean);
    var /= 8;
    for (std::size_t c2 = 0; c2 < 8; ++c2) {
      const double want = (x.at(r, c2) - mean) / std::sqrt(var + 1e-5) * gg[c2] + bb[c2];
      CHECK(std::abs(got.at(r, c2) - want) <= 1e-10);
    }
  }
}

TEST_CASE("layer_norm variance is one up to eps") {
  // Population variance of the normalized row is var / (var + eps).
  const Tensor x = random_tensor({1, 16}, 14, -100, 100);
  const Tensor y = ops::layer_norm(x, Tensor({16}, 1.0), Tensor({16}));
  double var = 0;
  for (double v : y.data()) var += v * v;
  CHECK(std::abs(var / 16 - 1.0) <= 1e-6);
}

TEST_CASE("softmax examples") {
  CHECK(ops::softmax(Tensor::vector({0, 0})) == Tensor::vector({0.5, 0.5}));
  CHECK(ops::softmax(Tensor::vector({1000, 1000})) == Tensor::vector({0.5, 0.5}));
  const Tensor x = random_tensor({9}, 15, -4, 4);
  const Tensor y = ops::softmax(x);
  double s = 0;
  std::size_t ax = 0, ay = 0;
  for (std::size_t i = 0; i < 9; ++i) {
    s += y[i];
    if (x[i] > x[ax]) ax = i;
    if (y[i] > y[ay]) ay = i;
  }
  CHECK(std::abs(s - 1.0) <= 1e-12);
  CHECK(ax == ay);
}

TEST_CASE("mean_std_pool of a known sequence") {
  const Tensor x = Tensor::matrix({{1, 10}, {3, 10}});
  const Tensor p = ops::mean_std_pool(x);
  CHECK(p.shape() == Shape{4});
  CHECK(p[0] == 2.0);
  CHECK(p[1] == 10.0);
  CHECK(p[2] == doctest::Approx(std::sqrt(1.0 + 1e-5)).epsilon(1e-15));
  CHECK(p[3] == doctest::Approx(std::sqrt(1e-5)).epsilon(1e-12));
}

TEST_CASE("forward ops are pure") {
  const Tensor x = random_tensor({4, 12}, 16);
  const Tensor w = random_tensor({4, 1, 3}, 17);
  CHECK(bitwise_equal(ops::conv1d(x, w, 1, 4), ops::conv1d(x, w, 1, 4)));
  CHECK(bitwise_equal(ops::gelu(x), ops::gelu(x)));
  CHECK(bitwise_equal(ops::linear_upsample(ops::avg_pool1d(x), 12),
                      ops::linear_upsample(ops::avg_pool1d(x), 12)));
}

TEST_CASE("slice and concat are inverse") {
  const Tensor x = random_tensor({3, 7}, 18);
  const Tensor a = ops::slice_cols(x, 0, 2), b = ops::slice_cols(x, 2, 5);
  CHECK(bitwise_equal(ops::concat_cols({a, b}), x));
  CHECK_THROWS(ops::slice_cols(x, 5, 3));
}
