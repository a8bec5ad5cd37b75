#pragma once

#include <span>
#include <vector>

namespace pnd {

// loss(g) = -eta * (1 - g)^zeta * log(g), with g clamped to
// [probability_floor, 1 - probability_floor] before evaluation.
struct FocalLossConfig {
  double eta = 1.0;
  double zeta = 2.0;
  double probability_floor = 1e-7;

  // Throws ConfigError on negative eta/zeta or a floor outside (0, 0.5).
  void validate() const;
};

struct LossValue {
  double loss = 0.0;
  double grad = 0.0;  // d loss / d input
};

// The derivative is that of the closed form at the clamped point, so a
// saturated prediction still produces a (bounded) training signal.
LossValue focal_loss(double g_t, const FocalLossConfig& config);

struct BatchLoss {
  double loss = 0.0;              // mean over samples
  std::vector<double> gradients;  // d mean / d g_t[i]
};

BatchLoss focal_loss_batch(std::span<const double> g_t, const FocalLossConfig& config);

// 0.5 d^2 / beta for |d| < beta, |d| - 0.5 beta otherwise; d = pred - target.
LossValue smooth_l1(double pred, double target, double beta);

// Area under precision-vs-recall: sort by descending score (ties by input
// order) and sum precision at each positive rank times its recall step.
// Throws UndefinedMetricError when there is no positive label.
double average_precision(std::span<const double> scores, std::span<const int> labels);

}  // namespace pnd
