#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "s4cv/objectives/losses.hpp"

using namespace s4cv;

namespace {

LabelMap labels_of(const std::vector<int>& v, Shape s) {
  LabelMap m(std::move(s));
  for (std::size_t i = 0; i < v.size(); ++i) m[static_cast<std::int64_t>(i)] = v[i];
  return m;
}

std::vector<int> random_labels(int n, int K, Rng& rng) {
  std::vector<int> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<int>(rng.below(K));
  return v;
}

Var<double> leaf(const Tensor<double>& t) { return Var<double>::leaf(t, true); }

Prediction<double> pred(const Tensor<double>& t, std::string id) { return {leaf(t), std::move(id), true}; }

}  // namespace

TEST(CeLoss, ConfidentCorrectIsNearZero) {
  Tensor<double> z(Shape{1, 3, 2, 2}, 0.0);
  const std::vector<int> y{0, 1, 2, 1};
  for (int i = 0; i < 4; ++i) z[y[i] * 4 + i] = 30;
  EXPECT_LT(ce_loss(leaf(z), labels_of(y, {1, 2, 2})).item(), 1e-4);
}

TEST(CeLoss, UniformLogitsGiveLogK) {
  Tensor<double> z(Shape{2, 4, 3, 3}, 0.0);
  EXPECT_NEAR(ce_loss(leaf(z), LabelMap(Shape{2, 3, 3}, 2)).item(), std::log(4.0), 1e-12);
}

TEST(CeLoss, MatchesPerPixelLoop) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto z = oracle::random_tensor({2, 3, 2, 2}, rng, -3, 3);
    const auto y = random_labels(8, 3, rng);
    EXPECT_NEAR(ce_loss(leaf(z), labels_of(y, {2, 2, 2})).item(), oracle::ce(oracle::flat(z), y, 2, 3, 4), 1e-10);
  }
}

TEST(CeLoss, RejectsOutOfRangeLabels) {
  Tensor<double> z(Shape{1, 2, 2, 2}, 0.0);
  EXPECT_THROW(ce_loss(leaf(z), labels_of({0, 1, 2, 0}, {1, 2, 2})), ArgumentError);
  EXPECT_THROW(ce_loss(leaf(z), labels_of({0, -1, 1, 0}, {1, 2, 2})), ArgumentError);
  EXPECT_THROW(dice_loss(leaf(z), labels_of({0, 1, 2, 0}, {1, 2, 2})), ArgumentError);
  EXPECT_THROW(ce_loss(leaf(z), LabelMap(Shape{1, 3, 2}, 0)), DimensionError);
}

TEST(CeLoss, Gradients) {
  Rng rng(2);
  auto z = leaf(oracle::random_tensor({2, 3, 3, 3}, rng, -2, 2));
  const auto y = labels_of(random_labels(18, 3, rng), {2, 3, 3});
  EXPECT_LT(oracle::check_gradients([&] { return ce_loss(z, y); }, {z}, 20, rng).max_rel_error, 1e-4);
}

TEST(DiceLoss, PerfectPredictionIsNearZero) {
  Tensor<double> z(Shape{1, 2, 2, 2}, 0.0);
  const std::vector<int> y{0, 1, 1, 0};
  for (int i = 0; i < 4; ++i) z[y[i] * 4 + i] = 60;
  EXPECT_LT(dice_loss(leaf(z), labels_of(y, {1, 2, 2})).item(), 1e-5);
}

TEST(DiceLoss, DisjointHardPredictionIsNearOne) {
  Tensor<double> z(Shape{1, 2, 2, 2}, 0.0);
  const std::vector<int> y{0, 1, 1, 0};
  for (int i = 0; i < 4; ++i) z[(1 - y[i]) * 4 + i] = 60;
  EXPECT_NEAR(dice_loss(leaf(z), labels_of(y, {1, 2, 2})).item(), 1.0, 1e-5);
}

TEST(DiceLoss, MatchesDirectFormula) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto z = oracle::random_tensor({1, 2, 3, 3}, rng, -3, 3);
    const auto y = random_labels(9, 2, rng);
    const double v = dice_loss(leaf(z), labels_of(y, {1, 3, 3})).item();
    EXPECT_NEAR(v, oracle::soft_dice_loss(oracle::flat(z), y, 1, 2, 9), 1e-10);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(DiceLoss, Gradients) {
  Rng rng(4);
  auto z = leaf(oracle::random_tensor({2, 3, 3, 3}, rng, -2, 2));
  const auto y = labels_of(random_labels(18, 3, rng), {2, 3, 3});
  EXPECT_LT(oracle::check_gradients([&] { return dice_loss(z, y); }, {z}, 20, rng).max_rel_error, 1e-4);
}

TEST(SupLoss, IsMeanOfCeAndDice) {
  Rng rng(5);
  const auto z = oracle::random_tensor({2, 3, 2, 2}, rng, -2, 2);
  const auto y = labels_of(random_labels(8, 3, rng), {2, 2, 2});
  const double ce = ce_loss(leaf(z), y).item(), dice = dice_loss(leaf(z), y).item();
  EXPECT_NEAR(sup_loss(leaf(z), y).item(), (ce + dice) / 2, 1e-15);
}

TEST(SupLoss, UniformLogitsSingleClass) {
  Tensor<double> z(Shape{1, 4, 2, 2}, 0.0);
  const std::vector<int> y(4, 1);
  const double dice = oracle::soft_dice_loss(oracle::flat(z), y, 1, 4, 4);
  EXPECT_NEAR(sup_loss(leaf(z), labels_of(y, {1, 2, 2})).item(), 0.5 * (std::log(4.0) + dice), 1e-12);
}

TEST(SupLoss, PerfectPredictionIsNearZero) {
  Tensor<double> z(Shape{1, 2, 2, 2}, 0.0);
  const std::vector<int> y{0, 1, 1, 0};
  for (int i = 0; i < 4; ++i) z[y[i] * 4 + i] = 60;
  EXPECT_LT(sup_loss(leaf(z), labels_of(y, {1, 2, 2})).item(), 1e-5);
}

TEST(SemiLoss, AgreementIsNearZero) {
  Tensor<double> z(Shape{1, 3, 2, 2}, 0.0);
  for (int i = 0; i < 4; ++i) z[(i % 3) * 4 + i] = 40;
  EXPECT_LT(semi_loss(pred(z, "a"), pred(z, "b")).item(), 1e-4);
}

TEST(SemiLoss, EqualsCeAgainstSourceArgmax) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto zt = oracle::random_tensor({2, 3, 2, 2}, rng, -3, 3);
    const auto zs = oracle::random_tensor({2, 3, 2, 2}, rng, -3, 3);
    const auto y = oracle::argmax_scan(oracle::flat(zs), 2, 3, 4);
    EXPECT_NEAR(semi_loss(pred(zt, "t"), pred(zs, "s")).item(), oracle::ce(oracle::flat(zt), y, 2, 3, 4), 1e-10);
  }
}

TEST(SemiLoss, NoGradientReachesSource) {
  Rng rng(7);
  auto t = pred(oracle::random_tensor({1, 2, 2, 2}, rng), "t");
  auto s = pred(oracle::random_tensor({1, 2, 2, 2}, rng), "s");
  backward(semi_loss(t, s));
  double norm = 0;
  for (auto v : s.logits.grad().values()) norm += v * v;
  EXPECT_EQ(norm, 0.0);
  double tn = 0;
  for (auto v : t.logits.grad().values()) tn += v * v;
  EXPECT_GT(tn, 0.0);
}

TEST(SemiLoss, SelfSupervisionIsRejected) {
  Tensor<double> z(Shape{1, 2, 2, 2}, 0.0);
  EXPECT_THROW(semi_loss(pred(z, "a"), pred(z, "a")), ConfigError);
}

TEST(SemiLoss, OwnArgmaxMinimisesCeOverAllLabelMaps) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto z = oracle::random_tensor({1, 2, 2, 2}, rng, -3, 3);
    const double own = semi_loss(pred(z, "t"), pred(z, "s")).item();
    for (int code = 0; code < 16; ++code) {
      std::vector<int> y{code & 1, (code >> 1) & 1, (code >> 2) & 1, (code >> 3) & 1};
      EXPECT_LE(own, ce_loss(leaf(z), labels_of(y, {1, 2, 2})).item() + 1e-15);
    }
  }
}

TEST(TotalLoss, ArithmeticAndLimits) {
  auto b = total_loss({0.5, 0.7}, {0.1, 0.2}, {0.3, 0.4}, 0.5, 0.5);
  EXPECT_NEAR(b.total, 1.7, 1e-15);
  EXPECT_EQ(b.semi(), (std::vector<double>{0.1, 0.2, 0.3, 0.4}));
  EXPECT_DOUBLE_EQ(total_loss({0.5, 0.7}, {0.1, 0.2}, {0.3, 0.4}, 0, 0).total, 1.2);
  EXPECT_DOUBLE_EQ(total_loss({0.5, 0.7}, {0, 0}, {0, 0}, 0.9, 0.3).total, total_loss({0.5, 0.7}, {0, 0}, {0, 0}, 0.1, 1).total);
}

TEST(TotalLoss, LinearInEachLambda) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> sup{rng.uniform(), rng.uniform()}, l1{rng.uniform(), rng.uniform()}, l2{rng.uniform(), rng.uniform()};
    const double a = rng.uniform(), b = rng.uniform();
    const double t0 = total_loss(sup, l1, l2, 0, b).total, t1 = total_loss(sup, l1, l2, 1, b).total;
    EXPECT_GE(t1 - t0, 0.0);
    EXPECT_NEAR(total_loss(sup, l1, l2, a, b).total, t0 + a * (t1 - t0), 1e-12);
    EXPECT_GE(total_loss(sup, l1, l2, a, 1).total, total_loss(sup, l1, l2, a, 0).total);
  }
}
