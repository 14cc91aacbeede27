#include <gtest/gtest.h>

#include "infdit/tensor.hpp"
#include "test_util.hpp"

using namespace infdit;
using testutil::max_abs_diff;
using testutil::random_tensor;

TEST(Matmul, IdentityTimesMatrix) {
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  Tensor<double> m({2, 2}, {3, 4, 5, 6});
  auto out = matmul(eye, m);
  EXPECT_EQ(out.data, m.data);
}

TEST(Matmul, OneByOne) {
  Tensor<double> a({1, 1}, {2});
  Tensor<double> b({1, 1}, {3});
  EXPECT_DOUBLE_EQ(matmul(a, b)[0], 6.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  auto a = random_tensor<double>({7, 5}, 11);
  auto b = random_tensor<double>({5, 3}, 12);
  auto got = matmul(a, b);

  Tensor<double> want({7, 3});
  for (std::int64_t i = 0; i < 7; ++i)
    for (std::int64_t j = 0; j < 3; ++j) {
      double acc = 0;
      for (std::int64_t k = 0; k < 5; ++k) acc += a.at2(i, k) * b.at2(k, j);
      want.at2(i, j) = acc;
    }
  EXPECT_LT(max_abs_diff(got, want), 1e-12);
}

TEST(Matmul, BatchedBroadcastRhs) {
  auto a = random_tensor<double>({2, 3, 4, 5}, 21);
  auto b = random_tensor<double>({5, 6}, 22);
  auto out = matmul(a, b);
  ASSERT_EQ(out.shape, (std::vector<std::int64_t>{2, 3, 4, 6}));
  // batch 1,2 == manual 2d product of that slice
  Tensor<double> slice({4, 5});
  std::copy_n(a.data.begin() + (1 * 3 + 2) * 20, 20, slice.data.begin());
  auto want = matmul(slice, b);
  for (std::int64_t i = 0; i < want.numel(); ++i)
    EXPECT_DOUBLE_EQ(out[(1 * 3 + 2) * 24 + i], want[i]);
}

TEST(Matmul, ShapeMismatchThrows) {
  Tensor<double> a({2, 3});
  Tensor<double> b({4, 2});
  EXPECT_THROW(matmul(a, b), std::invalid_argument);
}

TEST(Softmax, UniformRow) {
  Tensor<double> x({3}, {0, 0, 0});
  auto y = softmax_rows(x);
  for (auto v : y.data) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeMagnitudeStable) {
  Tensor<double> x({2}, {1000, 0});
  auto y = softmax_rows(x);
  EXPECT_TRUE(all_finite(y));
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
}

TEST(Softmax, MatchesExpSumOracle) {
  auto x = random_tensor<double>({1, 9}, 31, 2.0);
  auto y = softmax_rows(x);
  double z = 0;
  for (auto v : x.data) z += std::exp(v);
  for (std::int64_t i = 0; i < 9; ++i) EXPECT_NEAR(y[i], std::exp(x[i]) / z, 1e-12);
}

TEST(Softmax, RowsSumToOneFloat32) {
  // property across magnitudes up to 1e4
  for (double scale : {1.0, 100.0, 1e4}) {
    auto x = random_tensor<float>({16, 33}, 41, scale);
    auto y = softmax_rows(x);
    for (std::int64_t r = 0; r < 16; ++r) {
      float sum = 0;
      for (std::int64_t j = 0; j < 33; ++j) sum += y[r * 33 + j];
      EXPECT_NEAR(sum, 1.0f, 1e-6);
    }
  }
}

TEST(Softmax, EmptyRowThrows) {
  Tensor<double> x({2, 0});
  EXPECT_THROW(softmax_rows(x), std::invalid_argument);
}

TEST(LayerNorm, ConstantVectorToZero) {
  Tensor<double> x({4}, {2.5, 2.5, 2.5, 2.5});
  LayerNormParams<double> p(4);
  auto y = layernorm(x, p);
  for (auto v : y.data) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(LayerNorm, AlreadyNormalized) {
  Tensor<double> x({2}, {1, -1});
  LayerNormParams<double> p(2, 1e-12);
  auto y = layernorm(x, p);
  EXPECT_NEAR(y[0], 1.0, 1e-9);
  EXPECT_NEAR(y[1], -1.0, 1e-9);
}

TEST(LayerNorm, MomentOracle64) {
  auto x = random_tensor<double>({6, 37}, 51, 3.0);
  LayerNormParams<double> p(37, 1e-14);
  auto y = layernorm(x, p);
  for (std::int64_t r = 0; r < 6; ++r) {
    double mean = 0, var = 0;
    for (std::int64_t j = 0; j < 37; ++j) mean += y[r * 37 + j];
    mean /= 37;
    for (std::int64_t j = 0; j < 37; ++j) {
      const double c = y[r * 37 + j] - mean;
      var += c * c;
    }
    var /= 37;
    EXPECT_LE(std::abs(mean), 1e-10);
    EXPECT_NEAR(var, 1.0, 1e-8);
  }
}

TEST(LayerNorm, MomentProperty32) {
  auto x = random_tensor<float>({8, 64}, 52, 5.0);
  LayerNormParams<float> p(64, 1e-6);
  auto y = layernorm(x, p);
  for (std::int64_t r = 0; r < 8; ++r) {
    double mean = 0, var = 0;
    for (std::int64_t j = 0; j < 64; ++j) mean += y[r * 64 + j];
    mean /= 64;
    for (std::int64_t j = 0; j < 64; ++j) {
      const double c = y[r * 64 + j] - mean;
      var += c * c;
    }
    var /= 64;
    EXPECT_LE(std::abs(mean), 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(LayerNorm, ZeroDimThrows) {
  Tensor<double> x({3, 0});
  LayerNormParams<double> p(1);
  p.gain = Tensor<double>({0});
  p.shift = Tensor<double>({0});
  EXPECT_THROW(layernorm(x, p), std::invalid_argument);
}

TEST(Gelu, ZeroMapsToZero) {
  Tensor<double> x({1}, {0});
  EXPECT_DOUBLE_EQ(gelu(x)[0], 0.0);
}

TEST(Gelu, GradMatchesFiniteDiff) {
  for (double v : {-2.0, -0.3, 0.0, 0.7, 3.1}) {
    const double h = 1e-6;
    const double fd = (gelu_scalar(v + h) - gelu_scalar(v - h)) / (2 * h);
    EXPECT_NEAR(gelu_grad_scalar(v), fd, 1e-8);
  }
}

TEST(Silu, GradMatchesFiniteDiff) {
  for (double v : {-2.0, -0.3, 0.0, 0.7, 3.1}) {
    const double h = 1e-6;
    const double fd = (silu_scalar(v + h) - silu_scalar(v - h)) / (2 * h);
    EXPECT_NEAR(silu_grad_scalar(v), fd, 1e-8);
  }
}

TEST(Linear, IdentityWeightZeroBias) {
  LinearParams<double> p(3, 3);
  for (int i = 0; i < 3; ++i) p.weight.at2(i, i) = 1.0;
  auto x = random_tensor<double>({5, 3}, 61);
  auto y = linear(x, p);
  EXPECT_EQ(x.data, y.data);
}

TEST(Linear, InputDimMismatchThrows) {
  LinearParams<double> p(3, 2);
  Tensor<double> x({4, 4});
  EXPECT_THROW(linear(x, p), std::invalid_argument);
}

TEST(SeededInit, Deterministic) {
  auto a = seeded_init<double>({4, 9}, 7);
  auto b = seeded_init<double>({4, 9}, 7);
  EXPECT_EQ(a.data, b.data);
  auto c = seeded_init<double>({4, 9}, 8);
  EXPECT_NE(a.data, c.data);
}

TEST(SeededInit, ScaledNormalStd) {
  const std::int64_t d_in = 256;
  auto t = seeded_init<double>({d_in, 512}, 3);
  double sq = 0;
  for (auto v : t.data) sq += v * v;
  const double std_meas = std::sqrt(sq / static_cast<double>(t.numel()));
  EXPECT_NEAR(std_meas, 1.0 / std::sqrt(static_cast<double>(d_in)), 2e-3);
}

TEST(FiniteDiff, SumOfSquares) {
  Tensor<double> x({2}, {1, 2});
  auto g = finite_diff_grad<double>(
      [](const Tensor<double>& t) {
        double s = 0;
        for (auto v : t.data) s += v * v;
        return s;
      },
      x, 1e-5);
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 4.0, 1e-8);
}

TEST(FiniteDiff, SoftmaxAnalyticJacobian) {
  auto x = random_tensor<double>({1, 7}, 71);
  auto v = random_tensor<double>({1, 7}, 72);
  auto f = [&](const Tensor<double>& t) {
    auto p = softmax_rows(t);
    double s = 0;
    for (std::int64_t i = 0; i < 7; ++i) s += p[i] * v[i];
    return s;
  };
  auto g = finite_diff_grad<double>(f, x, 1e-5);

  // analytic: grad = p * (v - p.v)
  auto p = softmax_rows(x);
  double pv = 0;
  for (std::int64_t i = 0; i < 7; ++i) pv += p[i] * v[i];
  Tensor<double> want({1, 7});
  for (std::int64_t i = 0; i < 7; ++i) want[i] = p[i] * (v[i] - pv);
  EXPECT_LT(testutil::max_rel_err(g, want, 1e-6), 1e-6);
}

TEST(FiniteDiff, ConstantFunction) {
  auto x = random_tensor<double>({3}, 81);
  auto g = finite_diff_grad<double>([](const Tensor<double>&) { return 4.0; }, x, 1e-5);
  for (auto v : g.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Finiteness, DetectsNaN) {
  Tensor<double> x({2}, {1.0, std::nan("")});
  EXPECT_FALSE(all_finite(x));
  EXPECT_THROW(ensure_finite(x, "x"), std::runtime_error);
}
