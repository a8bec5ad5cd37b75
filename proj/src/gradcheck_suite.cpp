#include "pnd/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "pnd/error.hpp"
#include "pnd/fpr.hpp"
#include "pnd/gradcheck.hpp"
#include "pnd/losses.hpp"
#include "pnd/rng.hpp"
#include "pnd/rpn.hpp"

namespace pnd {

namespace {

using D = double;
constexpr double kEps = 1e-6;
constexpr double kCorruption = 1.1;

TensorD random_tensor(const Shape& shape, std::uint64_t seed, double scale) {
  Rng rng(seed);
  TensorD t(shape);
  for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

// Values bounded away from zero so the probe never crosses the relu kink.
TensorD away_from_zero(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  TensorD t(shape);
  for (auto& v : t.data()) v = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(0.05, 1.0);
  return t;
}

// Distinct values spaced 0.01 apart so no probe changes a pooling argmax.
TensorD distinct_values(const Shape& shape, std::uint64_t seed) {
  TensorD t(shape);
  const std::vector<int> perm = Rng(seed).permutation(static_cast<int>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * perm[i];
  return t;
}

// Multiplies the returned input gradient, to exercise the failure path.
class ScaledBackward : public Differentiable<D> {
 public:
  ScaledBackward(Differentiable<D>& inner, double factor) : inner_(inner), factor_(factor) {}
  TensorD forward(const TensorD& x) override { return inner_.forward(x); }
  TensorD backward(const TensorD& g) override {
    TensorD out = inner_.backward(g);
    for (auto& v : out.data()) v *= factor_;
    return out;
  }
  void collect_parameters(const std::string& prefix, NamedParams<D>& out) override {
    inner_.collect_parameters(prefix, out);
  }
  std::string name() const override { return inner_.name(); }

 private:
  Differentiable<D>& inner_;
  double factor_;
};

// Softmax followed by a fixed elementwise weighting; a plain sum of softmax
// outputs is constant and would give a vacuous check.
class WeightedSoftmax : public Differentiable<D> {
 public:
  explicit WeightedSoftmax(TensorD weights) : weights_(std::move(weights)) {}
  TensorD forward(const TensorD& x) override {
    TensorD y = softmax_.forward(x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= weights_[i];
    return y;
  }
  TensorD backward(const TensorD& g) override {
    TensorD gw = g;
    for (std::size_t i = 0; i < gw.size(); ++i) gw[i] *= weights_[i];
    return softmax_.backward(gw);
  }
  std::string name() const override { return "softmax"; }

 private:
  Softmax<D> softmax_;
  TensorD weights_;
};

// Concatenates flattened objectness logits and box deltas.
class RpnHeadAdapter : public Differentiable<D> {
 public:
  explicit RpnHeadAdapter(RpnNet<D>& net) : net_(net) {}
  TensorD forward(const TensorD& x) override {
    RpnOutput<D> out = net_.forward(x);
    logits_shape_ = out.logits.shape();
    deltas_shape_ = out.deltas.shape();
    std::vector<D> v(out.logits.values());
    // Fixed weighting of the deltas keeps the two heads' contributions distinct.
    for (std::size_t i = 0; i < out.deltas.size(); ++i) v.push_back(out.deltas[i] * weight(i));
    const int n = static_cast<int>(v.size());
    return TensorD({n}, std::move(v));
  }
  TensorD backward(const TensorD& g) override {
    const std::size_t nl = shape_numel(logits_shape_);
    TensorD gl(logits_shape_), gd(deltas_shape_);
    for (std::size_t i = 0; i < nl; ++i) gl[i] = g[i];
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = g[nl + i] * weight(i);
    return net_.backward(gl, gd);
  }
  void collect_parameters(const std::string& prefix, NamedParams<D>& out) override {
    for (auto& [name, p] : net_.parameters()) out.emplace_back(prefix + name, p);
  }
  std::string name() const override { return "rpn_head"; }

 private:
  static double weight(std::size_t i) { return 0.5 + 0.25 * static_cast<double>(i % 5); }
  RpnNet<D>& net_;
  Shape logits_shape_, deltas_shape_;
};

// Focal loss (positive label) on sigmoid(dual path logit).
class DualPathFocal : public Differentiable<D> {
 public:
  explicit DualPathFocal(DualPathNet<D>& net) : net_(net) {}
  TensorD forward(const TensorD& x) override {
    const TensorD logit = net_.forward(x);
    p_ = sigmoid_scalar(logit[0]);
    shape_ = logit.shape();
    return TensorD({1}, focal_loss(p_, focal_).loss);
  }
  TensorD backward(const TensorD& g) override {
    const double d = g[0] * focal_loss(p_, focal_).grad * p_ * (1.0 - p_);
    return net_.backward(TensorD(shape_, d));
  }
  void collect_parameters(const std::string& prefix, NamedParams<D>& out) override {
    net_.collect_parameters(prefix, out);
  }
  std::string name() const override { return "dual_path_focal"; }

 private:
  DualPathNet<D>& net_;
  FocalLossConfig focal_;
  double p_ = 0.5;
  Shape shape_;
};

ComponentCheck from_result(const std::string& name, const GradCheckResult& r) {
  return {name, r.max_rel_error, r.worst_entry, r.entries_checked};
}

ComponentCheck layer_check(const std::string& name, Differentiable<D>& layer, const TensorD& input, bool corrupt,
                           std::size_t max_entries = 0) {
  ScaledBackward wrapped(layer, kCorruption);
  Differentiable<D>& target = corrupt ? static_cast<Differentiable<D>&>(wrapped) : layer;
  return from_result(name, gradient_check<D>(target, input, kEps, max_entries));
}

ComponentCheck scalar_checks(const std::string& name, const std::vector<double>& points,
                             const std::function<LossValue(double)>& f, bool corrupt) {
  ComponentCheck c{name, 0.0, "", 0};
  for (double x : points) {
    const GradCheckResult r = scalar_gradient_check(
        [&](double v) {
          const LossValue l = f(v);
          return std::pair{l.loss, corrupt ? l.grad * kCorruption : l.grad};
        },
        x, 1e-6);
    ++c.entries_checked;
    if (r.max_rel_error > c.max_rel_error || c.worst_entry.empty()) {
      c.max_rel_error = r.max_rel_error;
      c.worst_entry = "x=" + std::to_string(x);
    }
  }
  return c;
}

}  // namespace

std::vector<std::string> gradcheck_components() {
  return {"conv3d", "maxpool3d", "relu", "linear", "sigmoid", "softmax", "residual_block",
          "focal_loss", "smooth_l1", "rpn_head", "dual_path", "dual_path_focal"};
}

std::vector<ComponentCheck> run_gradcheck_suite(std::uint64_t seed, const std::string& corrupt) {
  const auto names = gradcheck_components();
  if (!corrupt.empty() && std::find(names.begin(), names.end(), corrupt) == names.end()) {
    throw ConfigError("unknown gradcheck component '" + corrupt + "'");
  }
  auto s = [&](const char* label) { return derive_seed(seed, label); };
  std::vector<ComponentCheck> out;

  {
    Conv3d<D> conv(2, 3, 3, 2, 1);
    conv.init(s("conv3d.init"));
    for (auto& b : conv.params().bias.data()) b = 0.1;
    out.push_back(layer_check("conv3d", conv, random_tensor({2, 2, 5, 5, 5}, s("conv3d.x"), 1.0), corrupt == "conv3d"));
  }
  {
    MaxPool3d<D> pool(2, 2);
    out.push_back(layer_check("maxpool3d", pool, distinct_values({1, 2, 6, 6, 6}, s("maxpool3d.x")),
                              corrupt == "maxpool3d"));
  }
  {
    ReLU<D> relu;
    out.push_back(layer_check("relu", relu, away_from_zero({2, 3, 4, 4, 4}, s("relu.x")), corrupt == "relu"));
  }
  {
    Linear<D> lin(6, 4);
    lin.init(s("linear.init"));
    for (auto& b : lin.bias().data()) b = 0.2;
    out.push_back(layer_check("linear", lin, random_tensor({3, 6}, s("linear.x"), 1.0), corrupt == "linear"));
  }
  {
    Sigmoid<D> sig;
    out.push_back(layer_check("sigmoid", sig, random_tensor({2, 5}, s("sigmoid.x"), 3.0), corrupt == "sigmoid"));
  }
  {
    WeightedSoftmax sm(random_tensor({3, 5}, s("softmax.w"), 2.0));
    out.push_back(layer_check("softmax", sm, random_tensor({3, 5}, s("softmax.x"), 2.0), corrupt == "softmax"));
  }
  {
    ResidualBlock<D> block(3);
    block.init(s("residual.init"));
    out.push_back(layer_check("residual_block", block, random_tensor({1, 3, 5, 5, 5}, s("residual.x"), 1.0),
                              corrupt == "residual_block"));
  }
  {
    std::vector<double> points;
    for (int k = 1; k <= 19; ++k) points.push_back(0.05 * k);
    ComponentCheck worst{"focal_loss", 0.0, "", 0};
    for (const FocalLossConfig cfg : {FocalLossConfig{1.0, 2.0}, FocalLossConfig{0.25, 0.0},
                                      FocalLossConfig{1.0, 1.0}, FocalLossConfig{0.5, 3.5}}) {
      ComponentCheck c = scalar_checks("focal_loss", points, [&](double g) { return focal_loss(g, cfg); },
                                       corrupt == "focal_loss");
      worst.entries_checked += c.entries_checked;
      if (c.max_rel_error >= worst.max_rel_error) {
        worst.max_rel_error = c.max_rel_error;
        worst.worst_entry = c.worst_entry;
      }
    }
    out.push_back(worst);
  }
  {
    const double beta = 1.0 / 9.0;
    out.push_back(scalar_checks("smooth_l1", {-2.0, -0.5, -0.05, 0.0, 0.03, 0.08, 0.4, 1.7},
                                [&](double d) { return smooth_l1(d, 0.0, beta); }, corrupt == "smooth_l1"));
  }
  {
    RpnNet<D> net({2, 3}, 4, {3.0, 5.0});
    net.init(s("rpn.init"));
    RpnHeadAdapter head(net);
    out.push_back(layer_check("rpn_head", head, random_tensor({1, 1, 8, 8, 8}, s("rpn.x"), 1.0), corrupt == "rpn_head"));
  }
  {
    DualPathNet<D> net(2, 3);
    net.init(s("dual.init"));
    out.push_back(layer_check("dual_path", net, random_tensor({1, 1, 16, 16, 16}, s("dual.x"), 1.0),
                              corrupt == "dual_path", 64));
    DualPathFocal loss(net);
    out.push_back(layer_check("dual_path_focal", loss, random_tensor({1, 1, 16, 16, 16}, s("dual.x2"), 1.0),
                              corrupt == "dual_path_focal", 64));
  }
  return out;
}

}  // namespace pnd
