#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "pnd/boxes.hpp"
#include "pnd/error.hpp"
#include "pnd/rng.hpp"

using namespace pnd;

namespace {

BBox3D cube(double z, double y, double x, double edge) { return {{z, y, x}, {edge, edge, edge}}; }

}  // namespace

TEST(Iou3d, HandValues) {
  const BBox3D a = cube(0, 0, 0, 1);
  EXPECT_DOUBLE_EQ(iou_3d(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou_3d(a, cube(5, 0, 0, 1)), 0.0);
  EXPECT_NEAR(iou_3d(a, cube(0, 0.5, 0, 1)), 0.333333, 1e-6);
  // Touching faces share no volume.
  EXPECT_DOUBLE_EQ(iou_3d(a, cube(1, 0, 0, 1)), 0.0);
  // Nested: 1 / 8.
  EXPECT_DOUBLE_EQ(iou_3d(a, cube(0, 0, 0, 2)), 0.125);
}

TEST(Iou3dProperty, SymmetricBoundedAndMatchesCellCount) {
  Rng rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    const BBox3D a = oracle::random_grid_box(rng, 12, 6), b = oracle::random_grid_box(rng, 12, 6);
    const double ab = iou_3d(a, b);
    EXPECT_NEAR(ab, iou_3d(b, a), 1e-7);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_NEAR(ab, oracle::iou_by_cells(a, b), 1e-12);
    EXPECT_DOUBLE_EQ(iou_3d(a, a), 1.0);
  }
}

TEST(BoxCoding, HandDecode) {
  const BBox3D d = decode_box(cube(2, 2, 2, 6), {1, 0, 0, std::log(2.0), 0, 0});
  EXPECT_NEAR(d.center[0], 8.0, 1e-12);
  EXPECT_NEAR(d.center[1], 2.0, 1e-12);
  EXPECT_NEAR(d.size[0], 12.0, 1e-12);
  EXPECT_NEAR(d.size[2], 6.0, 1e-12);
}

TEST(BoxCoding, IdenticalBoxEncodesToZero) {
  for (double v : encode_box(cube(3, 4, 5, 7), cube(3, 4, 5, 7))) EXPECT_EQ(v, 0.0);
}

TEST(BoxCoding, HugeLogDeltaStaysFinite) {
  const BBox3D d = decode_box(cube(0, 0, 0, 1), {0, 0, 0, 500, 500, 500});
  for (double s : d.size) EXPECT_TRUE(std::isfinite(s));
}

TEST(BoxCodingProperty, DecodeInvertsEncode) {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const BBox3D gt{{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)},
                    {rng.uniform(0.5, 30), rng.uniform(0.5, 30), rng.uniform(0.5, 30)}};
    const BBox3D anchor{{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)},
                        {rng.uniform(2, 20), rng.uniform(2, 20), rng.uniform(2, 20)}};
    const BBox3D back = decode_box(anchor, encode_box(gt, anchor));
    for (int a = 0; a < 3; ++a) {
      EXPECT_NEAR(back.center[a], gt.center[a], 1e-5);
      EXPECT_NEAR(back.size[a], gt.size[a], 1e-5);
    }
  }
}

TEST(ClipBox, StaysInsideBounds) {
  const BBox3D c = clip_box(cube(0, 5, 15, 6), {10, 10, 10});
  for (int a = 0; a < 3; ++a) {
    EXPECT_GE(c.lo()[a], -1e-12);
    EXPECT_LE(c.hi()[a], 10 + 1e-12);
    EXPECT_GT(c.size[a], 0.0);
  }
  EXPECT_NEAR(c.size[0], 3.0, 1e-12);
  EXPECT_NEAR(c.size[1], 6.0, 1e-12);
}

TEST(Nms3d, HandCases) {
  EXPECT_TRUE(nms_3d({}, 0.5, 10).empty());
  const std::vector<Proposal> one{{cube(1, 1, 1, 2), 0.3}};
  EXPECT_EQ(nms_3d(one, 0.5, 10).size(), 1u);

  const std::vector<Proposal> twins{{cube(1, 1, 1, 2), 0.8}, {cube(1, 1, 1, 2), 0.9}};
  const auto kept = nms_3d(twins, 0.5, 10);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].objectness, 0.9);

  std::vector<Proposal> apart;
  for (int i = 0; i < 6; ++i) apart.push_back({cube(10.0 * i, 0, 0, 2), 0.1 * i});
  EXPECT_EQ(nms_3d(apart, 0.5, 10).size(), 6u);
  const auto capped = nms_3d_indices(apart, 0.5, 4);
  EXPECT_EQ(capped, (std::vector<std::size_t>{5, 4, 3, 2}));
}

TEST(Nms3d, ThresholdOutsideRangeRejected) {
  const std::vector<Proposal> one{{cube(1, 1, 1, 2), 0.3}};
  EXPECT_THROW(nms_3d(one, 0.0, 1), ConfigError);
  EXPECT_THROW(nms_3d(one, 1.5, 1), ConfigError);
}

TEST(Nms3dProperty, MatchesQuadraticOracle) {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = rng.below(201);
    std::vector<Proposal> props(n);
    for (auto& p : props) {
      p.box = oracle::random_grid_box(rng, 16, 5);
      p.objectness = static_cast<double>(rng.below(20)) / 20.0;
    }
    const double thr = 0.05 + 0.9 * rng.uniform();
    const std::size_t cap = 1 + rng.below(60);
    const auto got = nms_3d_indices(props, thr, cap);
    EXPECT_EQ(got, oracle::nms(props, thr, cap));
    for (std::size_t i = 1; i < got.size(); ++i) {
      EXPECT_GE(props[got[i - 1]].objectness, props[got[i]].objectness);
    }
  }
}
