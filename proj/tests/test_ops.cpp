#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "amen/ops.hpp"
#include "helpers.hpp"

using namespace amen;
using amen::testing::random_tensor;

namespace {

Tensor<double> grid(std::size_t c, std::size_t h, std::size_t w, std::vector<double> v) {
  return Tensor<double>({c, h, w}, std::move(v));
}

Tensor<double> zeros(std::size_t n) { return Tensor<double>({n}); }

}  // namespace

TEST(TensorTest, RejectsBadRanksAndZeroExtents) {
  EXPECT_THROW(Tensor<double>(Shape{}), ShapeError);
  EXPECT_THROW(Tensor<double>(Shape{1, 1, 1, 1, 1}), ShapeError);
  EXPECT_THROW(Tensor<double>(Shape{2, 0}), ShapeError);
  EXPECT_THROW(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(TensorTest, ChannelMajorIndexing) {
  Tensor<double> t({2, 3, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  EXPECT_EQ(t.at(1, 2, 3), (1 * 3 + 2) * 4 + 3);
  EXPECT_EQ(t.at(0, 1, 0), 4);
}

TEST(TensorTest, GradSlotIsSeparateFromValues) {
  Tensor<double> t({3}, 1.0);
  EXPECT_FALSE(t.has_grad());
  t.grad()[1] = 5.0;
  EXPECT_TRUE(t.has_grad());
  EXPECT_EQ(t[1], 1.0);
  Tensor<double> u({3}, 1.0);
  EXPECT_TRUE(t == u);
  t.drop_grad();
  EXPECT_FALSE(t.has_grad());
}

// --- conv2d ---

TEST(Conv2dTest, UnitKernelIsIdentity) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({1, 5, 5}, rng);
  auto y = conv2d(x, Tensor<double>({1, 1, 1, 1}, 1.0), zeros(1));
  EXPECT_EQ(y, x);
}

TEST(Conv2dTest, OnesKernelSumsWindow) {
  auto y = conv2d(grid(1, 2, 2, {1, 2, 3, 4}), Tensor<double>({1, 1, 2, 2}, 1.0), zeros(1));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y[0], 10.0);
}

TEST(Conv2dTest, ZeroInputGivesBias) {
  std::mt19937_64 rng(2);
  auto k = random_tensor({3, 2, 3, 3}, rng);
  auto b = Tensor<double>({3}, std::vector<double>{0.5, -1.0, 2.0});
  auto y = conv2d(Tensor<double>({2, 6, 6}), k, b, 1, 1);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 36; ++i) EXPECT_EQ(y[o * 36 + i], b[o]);
}

TEST(Conv2dTest, ChannelMismatchNamesBothShapes) {
  try {
    conv2d(Tensor<double>({2, 4, 4}), Tensor<double>({1, 3, 3, 3}), zeros(1));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x4x4]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[1x3x3x3]"), std::string::npos) << msg;
  }
}

TEST(Conv2dTest, MatchesNaiveReferenceAcrossStridesAndPadding) {
  std::mt19937_64 rng(3);
  for (std::size_t stride : {1, 2, 3})
    for (std::size_t pad : {0, 1, 2})
      for (std::size_t k : {1, 3, 5}) {
        auto x = random_tensor({3, 9, 7}, rng);
        auto w = random_tensor({4, 3, k, k}, rng);
        auto b = random_tensor({4}, rng);
        auto got = conv2d(x, w, b, stride, pad);
        auto want = amen::testing::conv2d_reference(x, w, b, stride, pad);
        ASSERT_EQ(got.shape(), want.shape());
        EXPECT_LT(max_abs_diff(got, want), 1e-12) << "stride " << stride << " pad " << pad << " k " << k;
      }
}

TEST(Conv2dTest, LinearInInput) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({2, 6, 6}, rng), y = random_tensor({2, 6, 6}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    const double a = std::uniform_real_distribution<double>(-3, 3)(rng);
    const double b = std::uniform_real_distribution<double>(-3, 3)(rng);
    Tensor<double> mix(x.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
    auto lhs = conv2d(mix, w, zeros(3), 1, 1);
    auto cx = conv2d(x, w, zeros(3), 1, 1), cy = conv2d(y, w, zeros(3), 1, 1);
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], a * cx[i] + b * cy[i], 1e-10);
  }
}

// --- max_pool2d ---

TEST(MaxPoolTest, PicksWindowMax) {
  auto y = max_pool2d(grid(1, 2, 2, {1, 2, 3, 4}), 2, 2);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 4.0);
}

TEST(MaxPoolTest, ConstantAndIdentityCases) {
  auto c = max_pool2d(Tensor<double>({2, 4, 4}, 0.7), 2, 2);
  for (auto v : c.values()) EXPECT_EQ(v, 0.7);
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 3, 3}, rng);
  EXPECT_EQ(max_pool2d(x, 1, 1), x);
}

TEST(MaxPoolTest, WindowLargerThanInputThrows) {
  EXPECT_THROW(max_pool2d(Tensor<double>({1, 2, 2}), 3, 1), ShapeError);
}

TEST(MaxPoolTest, TiesRouteGradientToFirstIndex) {
  auto x = Tensor<double>({1, 2, 2}, 1.0);
  auto g = max_pool2d_backward(x, Tensor<double>({1, 1, 1}, 2.0), 2, 2);
  EXPECT_EQ(g[0], 2.0);
  EXPECT_EQ(g[1] + g[2] + g[3], 0.0);
}

// --- relu ---

TEST(ReluTest, SignCases) {
  auto y = relu(Tensor<double>::vector({-1, 2, 0}));
  EXPECT_EQ(y, Tensor<double>::vector({0, 2, 0}));
  EXPECT_EQ(relu(Tensor<double>::vector({1, 2, 3})), Tensor<double>::vector({1, 2, 3}));
  EXPECT_EQ(relu(Tensor<double>::vector({-1, -2})), Tensor<double>::vector({0, 0}));
}

TEST(ReluTest, DerivativeAtZeroIsZero) {
  auto g = relu_backward(Tensor<double>::vector({-1, 0, 1}), Tensor<double>::vector({5, 5, 5}));
  EXPECT_EQ(g, Tensor<double>::vector({0, 0, 5}));
}

// --- linear ---

TEST(LinearTest, HandMatvec) {
  auto y = linear(Tensor<double>::vector({1, 1}), Tensor<double>({2, 2}, std::vector<double>{1, 2, 3, 4}), zeros(2));
  EXPECT_EQ(y, Tensor<double>::vector({3, 7}));
}

TEST(LinearTest, IdentityAndZeroWeights) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({4}, rng);
  Tensor<double> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  EXPECT_EQ(linear(x, eye, zeros(4)), x);
  auto b = random_tensor({3}, rng);
  EXPECT_EQ(linear(x, Tensor<double>({3, 4}), b), b);
}

TEST(LinearTest, ExtentMismatchThrows) {
  EXPECT_THROW(linear(zeros(3), Tensor<double>({2, 4}), zeros(2)), ShapeError);
  EXPECT_THROW(linear(zeros(4), Tensor<double>({2, 4}), zeros(3)), ShapeError);
}

// --- softmax / cross-entropy ---

TEST(SoftmaxTest, SymmetricAndClosedFormCases) {
  auto a = softmax(Tensor<double>::vector({0, 0}));
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  auto b = softmax(Tensor<double>::vector({4.2, 4.2, 4.2}));
  for (auto v : b.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  auto c = softmax(Tensor<double>::vector({std::log(1.0), std::log(3.0)}));
  EXPECT_NEAR(c[0], 0.25, 1e-15);
  EXPECT_NEAR(c[1], 0.75, 1e-15);
}

TEST(SoftmaxTest, NonFiniteLogitThrows) {
  EXPECT_THROW(softmax(Tensor<double>::vector({0, std::nan("")})), NumericError);
  EXPECT_THROW(softmax(Tensor<double>::vector({0, INFINITY})), NumericError);
}

TEST(SoftmaxTest, SumsToOneAndShiftInvariant) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> shift(-50, 50);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = random_tensor({2 + static_cast<std::size_t>(trial % 6)}, rng, -10, 10);
    auto p = softmax(x);
    double s = 0;
    for (auto v : p.values()) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
    const double c = shift(rng);
    Tensor<double> xs = x;
    for (auto& v : xs.values()) v += c;
    auto q = softmax(xs);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(CrossEntropyTest, ReferenceValues) {
  EXPECT_NEAR(cross_entropy(Tensor<double>::vector({1.0, 1e-300}), 0), 0.0, 1e-15);
  EXPECT_NEAR(cross_entropy(Tensor<double>::vector({0.5, 0.5}), 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(cross_entropy(Tensor<double>::vector({0.75, 0.25}), 1), std::log(4.0), 1e-15);
  EXPECT_NEAR(cross_entropy(Tensor<double>::vector({0.75, 0.25}), Tensor<double>::vector({0, 1})),
              std::log(4.0), 1e-15);
}

TEST(CrossEntropyTest, ZeroProbabilityIsFloored) {
  const double loss = cross_entropy(Tensor<double>::vector({1.0, 0.0}), 1);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, -std::log(kProbabilityFloor), 1e-9);
}

TEST(CrossEntropyTest, NonNegativeAndZeroOnlyAtCertainty) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = softmax(random_tensor({3}, rng, -5, 5));
    for (std::size_t m = 0; m < 3; ++m) {
      const double l = cross_entropy(p, m);
      EXPECT_GE(l, 0.0);
      if (p[m] < 1.0) EXPECT_GT(l, 0.0);
    }
  }
  EXPECT_EQ(cross_entropy(Tensor<double>::vector({0.0, 1.0}), 1), 0.0);
}

TEST(CrossEntropyTest, BatchMeanAndLabelChecks) {
  std::vector<Tensor<double>> probs{Tensor<double>::vector({0.5, 0.5}), Tensor<double>::vector({0.75, 0.25})};
  std::vector<std::size_t> labels{0, 1};
  EXPECT_NEAR(cross_entropy<double>(probs, labels), (std::log(2.0) + std::log(4.0)) / 2, 1e-15);
  EXPECT_THROW(cross_entropy(Tensor<double>::vector({0.5, 0.5}), 2), ArgumentError);
}

// --- global average pool ---

TEST(GapTest, Means) {
  auto g = global_average_pool(grid(1, 2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(g, Tensor<double>::vector({2.5}));
  auto c = global_average_pool(Tensor<double>({3, 4, 5}, -1.5));
  for (auto v : c.values()) EXPECT_DOUBLE_EQ(v, -1.5);
}

// --- sgd ---

TEST(SgdTest, TwoMomentumSteps) {
  std::vector<Tensor<double>> p{Tensor<double>::vector({1.0})}, v{Tensor<double>::vector({0.0})};
  const std::vector<Tensor<double>> g{Tensor<double>::vector({1.0})};
  const SgdOptions opt{0.1, 0.9, 0.0};
  sgd_step<double>(p, g, v, opt);
  EXPECT_NEAR(p[0][0], 0.9, 1e-15);
  EXPECT_NEAR(v[0][0], -0.1, 1e-15);
  sgd_step<double>(p, g, v, opt);
  EXPECT_NEAR(v[0][0], -0.19, 1e-15);
  EXPECT_NEAR(p[0][0], 0.71, 1e-15);
}

TEST(SgdTest, VanillaAndFixedPoint) {
  std::mt19937_64 rng(9);
  auto theta = random_tensor({5}, rng);
  auto grad = random_tensor({5}, rng);
  std::vector<Tensor<double>> p{theta}, v{Tensor<double>({5})};
  sgd_step<double>(p, std::vector{grad}, v, {0.05, 0.0, 0.0});
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(p[0][i], theta[i] - 0.05 * grad[i]);

  std::vector<Tensor<double>> q{theta}, w{Tensor<double>({5})};
  sgd_step<double>(q, std::vector{Tensor<double>({5})}, w, {0.05, 0.9, 0.0});
  EXPECT_EQ(q[0], theta);
}

TEST(SgdTest, WeightDecayEntersTheStep) {
  std::vector<Tensor<double>> p{Tensor<double>::vector({2.0})}, v{Tensor<double>::vector({0.0})};
  sgd_step<double>(p, std::vector{Tensor<double>::vector({0.0})}, v, {0.1, 0.0, 0.5});
  EXPECT_NEAR(p[0][0], 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}

TEST(SgdTest, ShapeMismatchThrows) {
  std::vector<Tensor<double>> p{zeros(3)}, v{zeros(3)};
  EXPECT_THROW(sgd_step<double>(p, std::vector{zeros(2)}, v, {}), ShapeError);
  EXPECT_THROW(sgd_step<double>(p, std::vector<Tensor<double>>{}, v, {}), ShapeError);
}

TEST(SgdTest, BitwiseReproducible) {
  std::mt19937_64 rng(10);
  auto theta = random_tensor({64}, rng);
  auto grad = random_tensor({64}, rng);
  auto run = [&] {
    std::vector<Tensor<double>> p{theta}, v{Tensor<double>({64})};
    for (int i = 0; i < 5; ++i) sgd_step<double>(p, std::vector{grad}, v, {0.01, 0.99, 0.01});
    return p[0];
  };
  EXPECT_EQ(run(), run());
}
