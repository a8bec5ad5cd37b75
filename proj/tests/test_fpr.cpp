#include <gtest/gtest.h>

#include <cmath>

#include "pnd/error.hpp"
#include "pnd/fpr.hpp"
#include "pnd/gradcheck.hpp"
#include "pnd/losses.hpp"
#include "pnd/rng.hpp"

using namespace pnd;

namespace {

Volume ramp_volume() {
  Volume v({40, 36, 34}, {1.25, 0.7, 0.8}, {-30.0, 12.0, 4.0});
  for (int z = 0; z < v.dims[0]; ++z)
    for (int y = 0; y < v.dims[1]; ++y)
      for (int x = 0; x < v.dims[2]; ++x) v.at(z, y, x) = static_cast<float>(z * 10000 + y * 100 + x);
  return v;
}

std::vector<Candidate> some_candidates(const Volume& v, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Candidate> out;
  for (int i = 0; i < n; ++i) {
    const Vec3 vox{rng.uniform(0, v.dims[0] - 1), rng.uniform(0, v.dims[1] - 1), rng.uniform(0, v.dims[2] - 1)};
    out.push_back({"s", voxel_to_world(v, vox), rng.uniform()});
  }
  return out;
}

}  // namespace

TEST(ExtractCandidatePatch, ConstantVolumeAtCenter) {
  const Volume v({40, 40, 40}, {0.7, 0.7, 0.7}, {0, 0, 0}, 0.3f);
  const Tensor p = extract_candidate_patch(v, voxel_to_world(v, {20, 20, 20}), 32);
  EXPECT_EQ(p.shape(), (Shape{1, 1, 32, 32, 32}));
  for (float x : p.data()) EXPECT_EQ(x, 0.3f);
}

TEST(ExtractCandidatePatch, CornerIsMostlyFill) {
  const Volume v({40, 40, 40}, {1, 1, 1}, {0, 0, 0}, 1.0f);
  const Tensor p = extract_candidate_patch(v, {0, 0, 0}, 32);
  double sum = 0.0;
  for (float x : p.data()) sum += x;
  EXPECT_EQ(sum, 16.0 * 16 * 16);
}

TEST(ExtractCandidatePatch, CenterFollowsWorldToVoxel) {
  const Volume v = ramp_volume();
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 world{rng.uniform(-30, 18), rng.uniform(12, 36), rng.uniform(4, 30)};
    const Vec3 vox = world_to_voxel(v, world);
    const Tensor p = extract_candidate_patch(v, world, 8);
    const int z = static_cast<int>(std::lround(vox[0])), y = static_cast<int>(std::lround(vox[1])),
              x = static_cast<int>(std::lround(vox[2]));
    // Element (4,4,4) of an 8^3 crop is the nearest voxel.
    EXPECT_EQ(p.at(0, 0, 4, 4, 4), v.at(z, y, x));
  }
}

TEST(ExtractCandidatePatch, OutsideIsInputError) {
  const Volume v = ramp_volume();
  EXPECT_THROW(extract_candidate_patch(v, {-100, 20, 10}), InputError);
  EXPECT_THROW(extract_candidate_patch(v, {0, 12.0 + 0.7 * 36.0, 10}), InputError);
}

TEST(FprForward, ZeroClassifierGivesHalf) {
  FprModel model(4, 8);
  model.init(1);
  for (const auto& [name, p] : model.parameters()) {
    if (name.rfind("classifier.", 0) == 0) std::fill(p->values().begin(), p->values().end(), 0.0f);
  }
  EXPECT_DOUBLE_EQ(fpr_forward(tensor_rand({1, 1, 32, 32, 32}, 2, 1.0f), model), 0.5);
}

TEST(FprForward, OpenUnitIntervalAndDeterministic) {
  FprModel model(2, 4);
  model.init(3);
  for (auto& [name, p] : model.parameters()) {
    for (float& w : p->values()) w *= 50.0f;  // push the logit to saturation
  }
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor x = tensor_rand({1, 1, 16, 16, 16}, 10 + s, 100.0f);
    const double p = fpr_forward(x, model);
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
    EXPECT_EQ(p, fpr_forward(x, model));
  }
}

TEST(FprForward, MalformedPatchIsShapeError) {
  FprModel model(2, 4);
  EXPECT_THROW(fpr_forward(Tensor({1, 2, 16, 16, 16}), model), ShapeError);
  EXPECT_THROW(fpr_forward(Tensor({2, 1, 16, 16, 16}), model), ShapeError);
  EXPECT_THROW(fpr_forward(Tensor({1, 1, 16, 16}), model), ShapeError);
}

TEST(DualPathNet, OutputShapeAndNames) {
  DualPathNet<float> net(2, 3);
  net.init(4);
  EXPECT_EQ(net.forward(Tensor({3, 1, 16, 16, 16}, 0.1f)).shape(), (Shape{3, 1}));
  std::vector<std::string> names;
  for (const auto& [n, p] : net.parameters()) names.push_back(n);
  EXPECT_EQ(names.front(), "path_a.0.weight");
  EXPECT_NE(std::find(names.begin(), names.end(), "path_a.4.weight"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "path_b.0.weight"), names.end());
  EXPECT_EQ(names.back(), "classifier.bias");
}

TEST(DualPathNet, FocalGradientMatchesFiniteDifferences) {
  class Wrapped : public Differentiable<double> {
   public:
    explicit Wrapped(DualPathNet<double>& n) : net(n) {}
    TensorD forward(const TensorD& x) override {
      p = sigmoid_scalar(net.forward(x)[0]);
      return TensorD({1}, focal_loss(1.0 - p, {}).loss);
    }
    TensorD backward(const TensorD& g) override {
      return net.backward(TensorD({1, 1}, -g[0] * focal_loss(1.0 - p, {}).grad * p * (1.0 - p)));
    }
    void collect_parameters(const std::string& prefix, NamedParams<double>& out) override {
      net.collect_parameters(prefix, out);
    }
    std::string name() const override { return "wrapped"; }
    DualPathNet<double>& net;
    double p = 0.5;
  };
  DualPathNet<double> net(2, 3);
  net.init(8);
  Wrapped w(net);
  Rng rng(9);
  TensorD x({1, 1, 16, 16, 16});
  for (auto& v : x.data()) v = rng.uniform(-1.0, 1.0);
  const auto r = gradient_check<double>(w, x, 1e-6, 48);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst_entry;
}

TEST(RejectFalsePositives, ThresholdExtremes) {
  const Volume v = ramp_volume();
  FprModel model(2, 4);
  model.init(11);
  const auto cands = some_candidates(v, 12, 12);
  const auto all = reject_false_positives(cands, v, model, 0.0, 16);
  EXPECT_EQ(all.size(), cands.size());
  for (std::size_t i = 1; i < all.size(); ++i) EXPECT_GE(all[i - 1].probability, all[i].probability);
  EXPECT_TRUE(reject_false_positives(cands, v, model, 1.0, 16).empty());
  EXPECT_TRUE(reject_false_positives({}, v, model, 0.5, 16).empty());
}

TEST(RejectFalsePositivesProperty, SubsetIdempotentMonotone) {
  Volume v({24, 24, 24}, {1, 1, 1}, {0, 0, 0});
  Rng fill(13);
  for (float& x : v.data) x = static_cast<float>(fill.uniform());
  FprModel model(2, 4);
  model.init(14);
  const auto cands = some_candidates(v, 20, 15);
  const auto rescored = reject_false_positives(cands, v, model, 0.0, 16);
  std::vector<double> ps;
  for (const auto& c : rescored) ps.push_back(c.probability);
  std::sort(ps.begin(), ps.end());
  std::size_t prev = rescored.size() + 1;
  for (double thr : {0.0, ps[ps.size() / 4], ps[ps.size() / 2], ps.back(), 1.0}) {
    const auto kept = reject_false_positives(cands, v, model, thr, 16);
    EXPECT_LE(kept.size(), prev);
    prev = kept.size();
    for (const auto& k : kept) {
      EXPECT_GE(k.probability, thr);
      const bool found = std::any_of(rescored.begin(), rescored.end(), [&](const Candidate& r) {
        return r.center_world == k.center_world && r.probability == k.probability;
      });
      EXPECT_TRUE(found);
    }
    const auto again = reject_false_positives(kept, v, model, thr, 16);
    ASSERT_EQ(again.size(), kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) EXPECT_EQ(again[i].center_world, kept[i].center_world);
  }
}

TEST(FprConfig, Validation) {
  FprConfig c;
  EXPECT_NO_THROW(c.validate());
  c.crop_size = 31;
  EXPECT_THROW(c.validate(), ConfigError);
  c = FprConfig{};
  c.threshold = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}
