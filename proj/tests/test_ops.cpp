#include <gtest/gtest.h>

#include <cmath>

#include "shakedrop/gradcheck.hpp"
#include "shakedrop/nn.hpp"
#include "shakedrop/ops.hpp"
#include "shakedrop/rng.hpp"

namespace shakedrop {
namespace {

Tensor random_tensor(const Shape& shape, RngStream& rng, Real lo = -1.0, Real hi = 1.0) {
  Tensor t(shape);
  for (int i = 0; i < t.numel(); ++i) t[i] = rng.next_uniform(lo, hi);
  return t;
}

TEST(Conv2d, OneByOneIsScalarMultiply) {
  Tape t;
  Value x = t.constant(Tensor(Shape{1, 1, 1, 1}, std::vector<Real>{2.0}));
  Value w = t.constant(Tensor(Shape{1, 1, 1, 1}, std::vector<Real>{3.0}));
  EXPECT_EQ(t.value(conv2d(t, x, w, 1, 0))[0], 6.0);
}

TEST(Conv2d, AllOnesFullKernel) {
  Tape t;
  Value x = t.constant(Tensor(Shape{1, 1, 3, 3}, 1.0));
  Value w = t.constant(Tensor(Shape{1, 1, 3, 3}, 1.0));
  Value y = conv2d(t, x, w, 1, 0);
  EXPECT_EQ(t.value(y).shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(t.value(y)[0], 9.0);
}

TEST(Conv2d, ShapeErrors) {
  Tape t;
  Value x = t.constant(Tensor(Shape{1, 2, 4, 4}, 1.0));
  Value w_bad_ch = t.constant(Tensor(Shape{1, 3, 3, 3}, 1.0));
  EXPECT_THROW(conv2d(t, x, w_bad_ch, 1, 0), std::invalid_argument);
  Value w = t.constant(Tensor(Shape{1, 2, 3, 3}, 1.0));
  // (4 - 3) % 2 != 0: output size not exact.
  EXPECT_THROW(conv2d(t, x, w, 2, 0), std::invalid_argument);
  EXPECT_THROW(conv2d(t, x, w, 0, 0), std::invalid_argument);
  EXPECT_THROW(conv2d(t, x, w, 1, -1), std::invalid_argument);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  RngStream rng(1234);
  Parameter x(random_tensor(Shape{2, 3, 5, 5}, rng));
  Parameter w(random_tensor(Shape{4, 3, 3, 3}, rng));
  auto build = [&](Tape& t) { return sum(t, conv2d(t, t.leaf(x), t.leaf(w), 1, 0)); };
  const auto rep = finite_diff_check_params(build, {&x, &w}, 1e-5);
  EXPECT_LT(rep.max_rel_error, 1e-6);
  EXPECT_EQ(rep.kinks_skipped, 0);
}

TEST(Linear, IdentityMap) {
  Tape t;
  Tensor x(Shape{2, 2}, std::vector<Real>{1, 2, 3, 4});
  Value y = linear(t, t.constant(x), t.constant(Tensor(Shape{2, 2}, std::vector<Real>{1, 0, 0, 1})),
                   t.constant(Tensor(Shape{2}, 0.0)));
  EXPECT_TRUE(bitwise_equal(t.value(y), x));
}

TEST(Linear, HandArithmetic) {
  Tape t;
  Value y = linear(t, t.constant(Tensor(Shape{1, 2}, std::vector<Real>{1, 2})),
                   t.constant(Tensor(Shape{2, 2}, std::vector<Real>{1, 0, 0, 1})),
                   t.constant(Tensor(Shape{2}, std::vector<Real>{3, 3})));
  EXPECT_EQ(t.value(y)[0], 4.0);
  EXPECT_EQ(t.value(y)[1], 5.0);
}

TEST(Linear, ShapeMismatch) {
  Tape t;
  Value x = t.constant(Tensor(Shape{1, 3}, 1.0));
  Value w = t.constant(Tensor(Shape{2, 2}, 1.0));
  Value b = t.constant(Tensor(Shape{2}, 0.0));
  EXPECT_THROW(linear(t, x, w, b), std::invalid_argument);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  RngStream rng(77);
  Parameter x(random_tensor(Shape{3, 4}, rng));
  Parameter w(random_tensor(Shape{4, 2}, rng));
  Parameter b(random_tensor(Shape{2}, rng));
  Tensor u = random_tensor(Shape{3, 2}, rng);
  auto build = [&](Tape& t) {
    return sum(t, mul(t, linear(t, t.leaf(x), t.leaf(w), t.leaf(b)), t.constant(u)));
  };
  EXPECT_LT(finite_diff_check_params(build, {&x, &w, &b}, 1e-5).max_rel_error, 1e-6);
}

TEST(BatchNorm, AlreadyNormalizedInputPassesThrough) {
  // Channel values {-1, +1}: batch mean 0, variance 1.
  BatchNorm2d bn(1);
  Tape t;
  Tensor x(Shape{2, 1, 1, 1}, std::vector<Real>{-1.0, 1.0});
  Value y = bn.forward(t, t.constant(x), Phase::Train);
  const Real expect = 1.0 / std::sqrt(1.0 + bn.eps);
  EXPECT_NEAR(t.value(y)[0], -expect, 1e-12);
  EXPECT_NEAR(t.value(y)[1], expect, 1e-12);
  EXPECT_NEAR(t.value(y)[0], x[0], 1e-4);  // identity up to the epsilon term
}

TEST(BatchNorm, EvalConstantChannelGivesShift) {
  BatchNorm2d bn(2);
  bn.running_mean = Tensor(Shape{2}, std::vector<Real>{0.7, -0.2});
  bn.running_var = Tensor(Shape{2}, 1.0);
  bn.shift.value = Tensor(Shape{2}, std::vector<Real>{5.0, -3.0});
  Tape t;
  Tensor x(Shape{1, 2, 2, 2});
  for (int i = 0; i < 4; ++i) x[i] = 0.7;
  for (int i = 4; i < 8; ++i) x[i] = -0.2;
  Value y = bn.forward(t, t.constant(x), Phase::Eval);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(t.value(y)[i], 5.0, 1e-12);
  for (int i = 4; i < 8; ++i) EXPECT_NEAR(t.value(y)[i], -3.0, 1e-12);
}

TEST(BatchNorm, TrainRequiresTwoElements) {
  BatchNorm2d bn(3);
  Tape t;
  Value x = t.constant(Tensor(Shape{1, 3, 1, 1}, 1.0));
  EXPECT_THROW(bn.forward(t, x, Phase::Train), std::invalid_argument);
  EXPECT_NO_THROW(bn.forward(t, x, Phase::Eval));
}

TEST(BatchNorm, RunningStatsConvergeToBatchStats) {
  BatchNorm2d bn(1);
  RngStream rng(5);
  Tensor x = random_tensor(Shape{8, 1, 4, 4}, rng, 1.0, 3.0);
  for (int i = 0; i < 200; ++i) {
    Tape t;
    bn.forward(t, t.constant(x), Phase::Train);
  }
  Real mean = 0.0;
  for (int i = 0; i < x.numel(); ++i) mean += x[i];
  mean /= x.numel();
  EXPECT_NEAR(bn.running_mean[0], mean, 1e-6);
}

TEST(BatchNorm, GradientMatchesFiniteDifferences) {
  RngStream rng(31);
  Parameter x(random_tensor(Shape{4, 2, 3, 3}, rng));
  BatchNorm2d bn(2);
  bn.gamma.value = random_tensor(Shape{2}, rng, 0.5, 1.5);
  bn.shift.value = random_tensor(Shape{2}, rng, -0.5, 0.5);
  Tensor u = random_tensor(Shape{4, 2, 3, 3}, rng);
  auto build = [&](Tape& t) {
    return sum(t, mul(t, bn.forward(t, t.leaf(x), Phase::Train), t.constant(u)));
  };
  EXPECT_LT(finite_diff_check_params(build, {&x, &bn.gamma, &bn.shift}, 1e-5).max_rel_error, 1e-5);
}

TEST(Relu, Definition) {
  Tape t;
  Value y = relu(t, t.constant(Tensor(Shape{3}, std::vector<Real>{-1.0, 0.0, 2.0})));
  EXPECT_EQ(t.value(y)[0], 0.0);
  EXPECT_EQ(t.value(y)[1], 0.0);
  EXPECT_EQ(t.value(y)[2], 2.0);
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  // -ln(1/K) for K = 4.
  Tape t;
  Value loss = softmax_cross_entropy(t, t.constant(Tensor(Shape{2, 4}, 0.3)), {1, 3});
  EXPECT_NEAR(t.value(loss)[0], std::log(4.0), 1e-9);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange) {
  Tape t;
  Value z = t.constant(Tensor(Shape{1, 3}, 0.0));
  EXPECT_THROW(softmax_cross_entropy(t, z, {3}), std::invalid_argument);
  EXPECT_THROW(softmax_cross_entropy(t, z, {-1}), std::invalid_argument);
}

TEST(SoftmaxCrossEntropy, MeanOverBatch) {
  Tape t1, t2;
  Tensor z(Shape{1, 2}, std::vector<Real>{2.0, -1.0});
  const Real single = t1.value(softmax_cross_entropy(t1, t1.constant(z), {0}))[0];
  Tensor z2(Shape{2, 2}, std::vector<Real>{2.0, -1.0, 2.0, -1.0});
  const Real doubled = t2.value(softmax_cross_entropy(t2, t2.constant(z2), {0, 0}))[0];
  EXPECT_NEAR(single, doubled, 1e-15);
}

TEST(GlobalAvgPool, ValueAndShape) {
  Tape t;
  Tensor x(Shape{1, 2, 2, 2}, std::vector<Real>{1, 2, 3, 4, 10, 20, 30, 40});
  Value y = global_avg_pool(t, t.constant(x));
  EXPECT_EQ(t.value(y).shape(), (Shape{1, 2}));
  EXPECT_EQ(t.value(y)[0], 2.5);
  EXPECT_EQ(t.value(y)[1], 25.0);
}

TEST(Shortcut, Subsample2PicksEvenPositions) {
  Tape t;
  Tensor x(Shape{1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) x[i] = i;
  Value y = subsample2(t, t.constant(x));
  EXPECT_EQ(t.value(y).shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(t.value(y)[0], 0.0);
  EXPECT_EQ(t.value(y)[1], 2.0);
  EXPECT_EQ(t.value(y)[2], 8.0);
  EXPECT_EQ(t.value(y)[3], 10.0);
}

TEST(Shortcut, PadChannelsAppendsZeros) {
  Tape t;
  Tensor x(Shape{1, 1, 1, 2}, std::vector<Real>{3.0, 4.0});
  Value y = pad_channels(t, t.constant(x), 3);
  EXPECT_EQ(t.value(y).shape(), (Shape{1, 3, 1, 2}));
  EXPECT_EQ(t.value(y)[0], 3.0);
  EXPECT_EQ(t.value(y)[1], 4.0);
  for (int i = 2; i < 6; ++i) EXPECT_EQ(t.value(y)[i], 0.0);
}

TEST(FiniteDiff, IdentityHasZeroError) {
  auto f = [](Tape& t, Value x) { return sum(t, x); };
  Tensor x(Shape{4}, std::vector<Real>{0.3, -0.7, 1.1, 0.0});
  const auto rep = finite_diff_check(f, x, 1e-5);
  EXPECT_LT(rep.max_rel_error, 1e-10);
  EXPECT_EQ(rep.kinks_skipped, 0);
}

TEST(FiniteDiff, ReluAwayFromZero) {
  auto f = [](Tape& t, Value x) { return sum(t, relu(t, x)); };
  Tensor x(Shape{4}, std::vector<Real>{0.5, -0.6, 1.2, -2.0});
  const auto rep = finite_diff_check(f, x, 1e-5);
  EXPECT_LT(rep.max_rel_error, 1e-6);
  EXPECT_EQ(rep.kinks_skipped, 0);
}

TEST(FiniteDiff, ReluAtZeroIsFlaggedNonDifferentiable) {
  auto f = [](Tape& t, Value x) { return sum(t, relu(t, x)); };
  Tensor x(Shape{2}, std::vector<Real>{0.0, 1.0});
  const auto rep = finite_diff_check(f, x, 1e-5);
  EXPECT_EQ(rep.kinks_skipped, 1);
  EXPECT_EQ(rep.elements_checked, 1);
  EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(FiniteDiff, ComposedGraphOverSeeds) {
  // conv -> bn -> relu -> pool -> linear -> cross entropy, several seeds.
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    RngStream rng(seed);
    Parameter x(random_tensor(Shape{2, 2, 4, 4}, rng, 0.2, 1.0));
    Parameter w(random_tensor(Shape{3, 2, 3, 3}, rng));
    BatchNorm2d bn(3);
    Parameter fw(random_tensor(Shape{3, 2}, rng));
    Parameter fb(random_tensor(Shape{2}, rng));
    const std::vector<int> labels{0, 1};
    auto build = [&](Tape& t) {
      Value h = conv2d(t, t.leaf(x), t.leaf(w), 1, 1);
      h = bn.forward(t, h, Phase::Train);
      h = relu(t, h);
      h = global_avg_pool(t, h);
      h = linear(t, h, t.leaf(fw), t.leaf(fb));
      return softmax_cross_entropy(t, h, labels);
    };
    const auto rep =
        finite_diff_check_params(build, {&x, &w, &bn.gamma, &bn.shift, &fw, &fb}, 1e-5);
    EXPECT_LT(rep.max_rel_error, 1e-6) << "seed " << seed;
  }
}

}  // namespace
}  // namespace shakedrop
