#include "pnd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pnd/error.hpp"

namespace pnd {

void FocalLossConfig::validate() const {
  if (!(eta >= 0.0)) throw ConfigError("focal loss eta must be >= 0");
  if (!(zeta >= 0.0)) throw ConfigError("focal loss zeta must be >= 0");
  if (!(probability_floor > 0.0 && probability_floor < 0.5)) {
    throw ConfigError("focal loss probability_floor must be in (0, 0.5)");
  }
}

LossValue focal_loss(double g_t, const FocalLossConfig& config) {
  config.validate();
  const double g = std::clamp(g_t, config.probability_floor, 1.0 - config.probability_floor);
  const double one_minus = 1.0 - g;
  const double log_g = std::log(g);
  const double modulator = config.zeta == 0.0 ? 1.0 : std::pow(one_minus, config.zeta);
  LossValue out;
  out.loss = -config.eta * modulator * log_g;
  // d/dg [-(1-g)^z log g] = z (1-g)^(z-1) log g - (1-g)^z / g
  double grad = -modulator / g;
  if (config.zeta != 0.0) grad += config.zeta * std::pow(one_minus, config.zeta - 1.0) * log_g;
  out.grad = config.eta * grad;
  return out;
}

BatchLoss focal_loss_batch(std::span<const double> g_t, const FocalLossConfig& config) {
  BatchLoss out;
  if (g_t.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(g_t.size());
  out.gradients.reserve(g_t.size());
  for (double g : g_t) {
    const LossValue v = focal_loss(g, config);
    out.loss += v.loss;
    out.gradients.push_back(v.grad * inv_n);
  }
  out.loss *= inv_n;
  return out;
}

LossValue smooth_l1(double pred, double target, double beta) {
  if (!(beta > 0.0)) throw ConfigError("smooth_l1 beta must be > 0");
  const double d = pred - target;
  const double ad = std::abs(d);
  if (ad < beta) return {0.5 * d * d / beta, d / beta};
  return {ad - 0.5 * beta, d > 0.0 ? 1.0 : -1.0};
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw InputError("average_precision: " + std::to_string(scores.size()) + " scores but " +
                     std::to_string(labels.size()) + " labels");
  }
  const auto positives = std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; });
  if (positives == 0) throw UndefinedMetricError("average_precision: no positive labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double recall_step = 1.0 / static_cast<double>(positives);
  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] == 0) continue;
    ++tp;
    ap += (static_cast<double>(tp) / static_cast<double>(rank + 1)) * recall_step;
  }
  return ap;
}

}  // namespace pnd
