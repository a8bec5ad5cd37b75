#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "pnd/checkpoint.hpp"
#include "pnd/config.hpp"
#include "pnd/error.hpp"
#include "pnd/metaimage.hpp"
#include "pnd/pipeline.hpp"
#include "pnd/rng.hpp"
#include "pnd/trainer.hpp"

using namespace pnd;

namespace {

RpnConfig tiny_rpn() {
  RpnConfig c;
  c.backbone_channels = {4, 8};
  c.head_channels = 8;
  c.feature_stride = 4;
  c.anchor_scales = {6.0, 12.0};
  c.patch_size = 32;
  c.overlap = 8;
  c.train_patch_size = 32;
  c.min_negatives = 8;
  return c;
}

std::vector<LabeledScan> tiny_scans(int count, std::uint64_t seed) {
  PhantomSettings s;
  s.size_min = 32;
  s.size_max = 40;
  s.nodules_min = 1;
  s.nodules_max = 1;
  s.diameter_min = 5.0;
  s.diameter_max = 9.0;
  return synthesize_phantoms(s, count, seed);
}

std::vector<CropSample> toy_crops() {
  std::vector<CropSample> out;
  for (int i = 0; i < 16; ++i) {
    Rng rng(derive_seed(5, static_cast<std::uint64_t>(i)));
    Tensor t({1, 1, 16, 16, 16});
    const bool positive = i % 2 == 0;
    for (int z = 0; z < 16; ++z)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          const double r2 = (z - 7.5) * (z - 7.5) + (y - 7.5) * (y - 7.5) + (x - 7.5) * (x - 7.5);
          t.at(0, 0, z, y, x) =
              static_cast<float>(0.15 + 0.05 * rng.normal() + (positive ? 0.5 * std::exp(-r2 / 8.0) : 0.0));
        }
    out.push_back({t, positive ? 1 : 0});
  }
  return out;
}

OptimizerConfig fast_optimizer(int epochs) {
  OptimizerConfig o;
  o.epochs = epochs;
  o.batch_size = 4;
  o.learning_rate = 0.01;
  o.seed = 3;
  return o;
}

}  // namespace

TEST(SgdStep, HandValues) {
  std::vector<double> p{0.0}, v{0.0};
  const std::vector<double> g{1.0}, zero{0.0};
  sgd_step<double>(p, zero, v, 0.1, 0.9);
  EXPECT_EQ(p[0], 0.0);
  sgd_step<double>(p, g, v, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(p[0], -0.1);

  p = {0.0};
  v = {0.0};
  sgd_step<double>(p, g, v, 0.1, 0.9);
  sgd_step<double>(p, g, v, 0.1, 0.9);
  EXPECT_DOUBLE_EQ(p[0], -0.29);
  EXPECT_DOUBLE_EQ(v[0], -0.19);
}

TEST(SgdStep, ShapeMismatch) {
  std::vector<float> p(3), v(3);
  const std::vector<float> g(2);
  EXPECT_THROW(sgd_step<float>(p, g, v, 0.1, 0.9), ShapeError);
}

TEST(ClipGradients, ScalesJointNorm) {
  Tensor a({2}), b({1});
  a.enable_grad();
  b.enable_grad();
  a.grad()[0] = 3.0f;
  a.grad()[1] = 0.0f;
  b.grad()[0] = 4.0f;
  const NamedParams<float> params{{"a", &a}, {"b", &b}};
  EXPECT_DOUBLE_EQ(clip_gradients(params, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6f, 1e-6);
  EXPECT_NEAR(b.grad()[0], 0.8f, 1e-6);
  EXPECT_NEAR(clip_gradients(params, 10.0), 1.0, 1e-6);
  EXPECT_NEAR(a.grad()[0], 0.6f, 1e-6);
}

TEST(OptimizerConfig, Validation) {
  OptimizerConfig o;
  EXPECT_NO_THROW(o.validate());
  o.momentum = 1.0;
  EXPECT_THROW(o.validate(), ConfigError);
  o = OptimizerConfig{};
  o.learning_rate = 0.0;
  EXPECT_THROW(o.validate(), ConfigError);
  o = OptimizerConfig{};
  o.batch_size = 0;
  EXPECT_THROW(o.validate(), ConfigError);
}

TEST(Stage1Crops, BoxesInsideAndIgnoredOutside) {
  const auto scans = tiny_scans(4, 8);
  const auto crops = sample_stage1_crops(scans, 16, 2);
  EXPECT_EQ(crops.size(), 8u);
  for (const auto& c : crops) {
    EXPECT_EQ(c.patch.shape(), (Shape{1, 1, 16, 16, 16}));
    for (const BBox3D& b : c.boxes)
      for (int a = 0; a < 3; ++a) {
        EXPECT_GE(b.center[a], 0.0);
        EXPECT_LE(b.center[a], 16.0);
      }
  }
  // Nodule-centred crops come first for each scan and hold their nodule.
  EXPECT_FALSE(crops[0].boxes.empty());
}

TEST(TrainStage1, ZeroEpochsIsNoOp) {
  const auto scans = tiny_scans(2, 1);
  RpnModel model(tiny_rpn());
  model.init(4);
  std::vector<float> before;
  for (const auto& [n, p] : model.parameters()) before.insert(before.end(), p->values().begin(), p->values().end());
  const TrainLog log = train_stage1(scans, model, tiny_rpn(), fast_optimizer(0), {});
  EXPECT_TRUE(log.records.empty());
  EXPECT_TRUE(log.epoch_means.empty());
  std::vector<float> after;
  for (const auto& [n, p] : model.parameters()) after.insert(after.end(), p->values().begin(), p->values().end());
  EXPECT_EQ(before, after);
}

TEST(TrainStage1, DeterministicAndDecreasing) {
  const auto scans = tiny_scans(8, 11);
  auto run = [&] {
    RpnModel model(tiny_rpn());
    model.init(4);
    return train_stage1(scans, model, tiny_rpn(), fast_optimizer(20), {});
  };
  const TrainLog a = run();
  const TrainLog b = run();
  ASSERT_EQ(a.epoch_means.size(), 20u);
  EXPECT_EQ(a.epoch_means, b.epoch_means);
  EXPECT_EQ(write_loss_csv(a), write_loss_csv(b));
  for (const auto& r : a.records) EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_LT(a.epoch_means.back(), a.epoch_means.front());
}

TEST(TrainStage1, DivergenceIsTyped) {
  auto scans = tiny_scans(2, 1);
  // A corrupted voxel block poisons every forward pass that sees it.
  for (float& v : scans[1].volume.data) v = std::numeric_limits<float>::infinity();
  RpnModel model(tiny_rpn());
  model.init(4);
  try {
    train_stage1(scans, model, tiny_rpn(), fast_optimizer(2), {});
    FAIL() << "expected divergence";
  } catch (const DivergedError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos) << e.what();
  }
}

TEST(TrainStage2, BalancedToySetLearns) {
  const auto samples = toy_crops();
  auto run = [&] {
    FprModel model(2, 4);
    model.init(6);
    return train_stage2(samples, model, fast_optimizer(15), {});
  };
  const TrainLog a = run();
  EXPECT_EQ(a.epoch_means, run().epoch_means);
  EXPECT_LT(a.epoch_means.back(), a.epoch_means.front());
}

TEST(TrainStage2, SingleClassRejectedAndZeroEpochs) {
  auto samples = toy_crops();
  std::vector<CropSample> positives;
  for (const auto& s : samples)
    if (s.label == 1) positives.push_back(s);
  FprModel model(2, 4);
  EXPECT_THROW(train_stage2(positives, model, fast_optimizer(2), {}), ConfigError);
  EXPECT_TRUE(train_stage2(samples, model, fast_optimizer(0), {}).records.empty());
}

TEST(LossCsv, Layout) {
  TrainLog log;
  log.records = {{0, 0, 0.5}, {0, 1, 0.25}};
  EXPECT_EQ(write_loss_csv(log), "epoch,batch,loss\n0,0,0.5\n0,1,0.25\n");
}

TEST(Checkpoint, RoundTripIsBitExact) {
  RpnModel rpn(tiny_rpn());
  rpn.init(7);
  const Checkpoint c = make_checkpoint(rpn);
  const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
  ASSERT_EQ(back.tensors.size(), c.tensors.size());
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    EXPECT_EQ(back.tensors[i].name, c.tensors[i].name);
    EXPECT_EQ(back.tensors[i].tensor.shape(), c.tensors[i].tensor.shape());
    EXPECT_EQ(std::memcmp(back.tensors[i].tensor.values().data(), c.tensors[i].tensor.values().data(),
                          c.tensors[i].tensor.size() * sizeof(float)),
              0);
  }
  RpnModel loaded = rpn_from_checkpoint(back);
  EXPECT_EQ(loaded.anchor_scales(), rpn.anchor_scales());
  const Tensor x = tensor_rand({1, 1, 32, 32, 32}, 8, 1.0f);
  EXPECT_EQ(rpn_forward(x, loaded).objectness.values(), rpn_forward(x, rpn).objectness.values());
}

TEST(Checkpoint, FprRoundTripThroughFile) {
  const auto path = std::filesystem::temp_directory_path() / ("pnd_ckpt_" + std::to_string(::getpid()) + ".bin");
  FprModel fpr(3, 5);
  fpr.init(9);
  save_checkpoint(path.string(), make_checkpoint(fpr));
  FprModel loaded = fpr_from_checkpoint(load_checkpoint(path.string()));
  std::filesystem::remove(path);
  EXPECT_EQ(loaded.c1(), 3);
  EXPECT_EQ(loaded.c2(), 5);
  const Tensor x = tensor_rand({1, 1, 16, 16, 16}, 10, 1.0f);
  EXPECT_EQ(fpr_forward(x, loaded), fpr_forward(x, fpr));
}

TEST(Checkpoint, CorruptInputsRejected) {
  RpnModel rpn(tiny_rpn());
  auto bytes = encode_checkpoint(make_checkpoint(rpn));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PNDM");

  auto bad = bytes;
  std::copy_n("XXXX", 4, bad.begin());
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  bad = bytes;
  bad[8] = 7;
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  for (const std::size_t keep : {std::size_t{0}, std::size_t{6}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(std::span(bytes.data(), keep)), CheckpointError) << keep;
  }
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.bin"), Error);
}

TEST(Checkpoint, StageMismatch) {
  RpnModel rpn(tiny_rpn());
  FprModel fpr(2, 4);
  EXPECT_THROW(fpr_from_checkpoint(make_checkpoint(rpn)), StageMismatchError);
  EXPECT_THROW(rpn_from_checkpoint(make_checkpoint(fpr)), StageMismatchError);
  Checkpoint c = make_checkpoint(fpr);
  c.tensors.pop_back();
  EXPECT_THROW(fpr_from_checkpoint(c), CheckpointError);
}
