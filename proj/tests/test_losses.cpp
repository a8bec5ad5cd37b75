#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "pnd/error.hpp"
#include "pnd/losses.hpp"
#include "pnd/rng.hpp"

using namespace pnd;

TEST(FocalLoss, PerfectPredictionIsNearZero) {
  for (const FocalLossConfig cfg : {FocalLossConfig{1.0, 2.0}, FocalLossConfig{0.25, 0.0}, FocalLossConfig{3.0, 5.0}}) {
    EXPECT_NEAR(focal_loss(1.0 - cfg.probability_floor, cfg).loss, 0.0, 1e-6);
    EXPECT_NEAR(focal_loss(1.0, cfg).loss, 0.0, 1e-6);
  }
}

TEST(FocalLoss, HandValues) {
  EXPECT_NEAR(focal_loss(0.5, {1.0, 0.0}).loss, 0.693147, 1e-6);
  EXPECT_NEAR(focal_loss(0.9, {1.0, 2.0}).loss, 0.001053605, 1e-9);
}

TEST(FocalLoss, ZeroProbabilityIsFinite) {
  const LossValue v = focal_loss(0.0, {});
  EXPECT_TRUE(std::isfinite(v.loss));
  EXPECT_TRUE(std::isfinite(v.grad));
  EXPECT_NEAR(v.loss, -std::log(1e-7) * std::pow(1.0 - 1e-7, 2.0), 1e-9);
}

TEST(FocalLoss, NegativeParametersRejected) {
  EXPECT_THROW(focal_loss(0.5, {-1.0, 2.0}), ConfigError);
  EXPECT_THROW(focal_loss(0.5, {1.0, -0.5}), ConfigError);
  EXPECT_THROW(focal_loss(0.5, {1.0, 2.0, 0.5}), ConfigError);
  EXPECT_THROW(focal_loss(0.5, {1.0, 2.0, 0.0}), ConfigError);
}

TEST(FocalLoss, BatchIsMeanOfSamples) {
  const std::vector<double> g{0.1, 0.5, 0.9, 0.3};
  const BatchLoss b = focal_loss_batch(g, {});
  double sum = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const LossValue v = focal_loss(g[i], {});
    sum += v.loss;
    EXPECT_DOUBLE_EQ(b.gradients[i], v.grad / 4.0);
  }
  EXPECT_DOUBLE_EQ(b.loss, sum / 4.0);
}

TEST(FocalLossProperty, NonNegativeAndDecreasing) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const FocalLossConfig cfg{rng.uniform(0.01, 4.0), rng.uniform(0.0, 5.0)};
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 200; ++k) {
      const double g = k / 200.0;
      const double l = focal_loss(g, cfg).loss;
      EXPECT_GE(l, 0.0);
      EXPECT_LE(l, prev) << "g=" << g;
      prev = l;
    }
  }
}

TEST(FocalLossProperty, ZetaZeroIsCrossEntropy) {
  for (int k = 1; k < 1000; ++k) {
    const double g = k / 1000.0;
    EXPECT_NEAR(focal_loss(g, {1.0, 0.0}).loss, -std::log(g), 1e-9);
  }
}

TEST(FocalLossProperty, DerivativeMatchesCentralDifferences) {
  const double h = 1e-6;
  for (const FocalLossConfig cfg : {FocalLossConfig{1.0, 2.0}, FocalLossConfig{0.25, 0.0}, FocalLossConfig{2.0, 0.5},
                                    FocalLossConfig{1.0, 4.0}}) {
    for (int k = 0; k <= 90; ++k) {
      const double g = 0.05 + 0.01 * k;
      const double numeric = (focal_loss(g + h, cfg).loss - focal_loss(g - h, cfg).loss) / (2 * h);
      const double analytic = focal_loss(g, cfg).grad;
      EXPECT_LT(std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8}), 1e-4)
          << "g=" << g;
    }
  }
}

TEST(SmoothL1, HandValues) {
  EXPECT_EQ(smooth_l1(0.7, 0.7, 1.0).loss, 0.0);
  EXPECT_EQ(smooth_l1(0.7, 0.7, 1.0).grad, 0.0);
  EXPECT_DOUBLE_EQ(smooth_l1(0.5, 0.0, 1.0).loss, 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(2.0, 0.0, 1.0).loss, 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1(2.0, 0.0, 1.0).grad, 1.0);
  EXPECT_DOUBLE_EQ(smooth_l1(-2.0, 0.0, 1.0).grad, -1.0);
}

TEST(SmoothL1, NonPositiveBetaRejected) {
  EXPECT_THROW(smooth_l1(1.0, 0.0, 0.0), ConfigError);
  EXPECT_THROW(smooth_l1(1.0, 0.0, -1.0), ConfigError);
}

TEST(SmoothL1Property, ContinuousValueAndSlopeAtJoint) {
  for (const double beta : {1.0 / 9.0, 0.5, 1.0, 3.0}) {
    for (const double sign : {-1.0, 1.0}) {
      const double joint = sign * beta;
      const double h = 1e-9;
      const LossValue in = smooth_l1(joint - sign * h, 0.0, beta), out = smooth_l1(joint + sign * h, 0.0, beta);
      EXPECT_NEAR(in.loss, out.loss, 1e-8);
      EXPECT_NEAR(in.grad, out.grad, 1e-7);
      EXPECT_NEAR(smooth_l1(joint, 0.0, beta).loss, 0.5 * beta, 1e-12);
    }
  }
}

TEST(AveragePrecision, HandValues) {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6};
  EXPECT_NEAR(average_precision(s, std::vector<int>{1, 0, 1, 0}), 0.833333, 1e-6);
  EXPECT_DOUBLE_EQ(average_precision(s, std::vector<int>{1, 1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(average_precision(s, std::vector<int>{1, 1, 1, 1}), 1.0);
}

TEST(AveragePrecision, TiesKeepInputOrder) {
  const std::vector<double> s{0.5, 0.5};
  EXPECT_DOUBLE_EQ(average_precision(s, std::vector<int>{0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(average_precision(s, std::vector<int>{1, 0}), 1.0);
}

TEST(AveragePrecision, Errors) {
  const std::vector<double> s{0.9, 0.8};
  EXPECT_THROW(average_precision(s, std::vector<int>{0, 0}), UndefinedMetricError);
  EXPECT_THROW(average_precision(s, std::vector<int>{1}), InputError);
}

TEST(AveragePrecisionProperty, MatchesEnumerationOracle) {
  Rng rng(101);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.below(10)) / 10.0;  // coarse grid forces ties
      labels[i] = static_cast<int>(rng.below(2));
    }
    labels[rng.below(n)] = 1;
    EXPECT_NEAR(average_precision(scores, labels), oracle::average_precision(scores, labels), 1e-12);
  }
}

TEST(AveragePrecisionProperty, InvariantUnderMonotoneTransform) {
  Rng rng(103);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(30);
    std::vector<double> scores(n), transformed(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = rng.uniform(-2.0, 2.0);
      transformed[i] = std::exp(3.0 * scores[i]) + 7.0;
      labels[i] = static_cast<int>(rng.below(2));
    }
    labels[0] = 1;
    const double ap = average_precision(scores, labels);
    EXPECT_DOUBLE_EQ(ap, average_precision(transformed, labels));
    EXPECT_GE(ap, 0.0);
    EXPECT_LE(ap, 1.0);
  }
}
