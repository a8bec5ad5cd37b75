#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "pnd/error.hpp"
#include "pnd/gradcheck.hpp"
#include "pnd/gradcheck_suite.hpp"
#include "pnd/layers.hpp"
#include "pnd/rng.hpp"

using namespace pnd;

namespace {

Conv3dParams<float> conv_params(int co, int ci, int k, int stride, int pad, float w, float b) {
  Conv3dParams<float> p;
  p.weights = Tensor({co, ci, k, k, k}, w);
  p.bias = Tensor({co}, b);
  p.stride = stride;
  p.padding = pad;
  return p;
}

}  // namespace

TEST(Conv3d, IdentityKernelCopiesInput) {
  const Tensor x = tensor_rand({2, 1, 3, 4, 5}, 1, 1.0f);
  const auto p = conv_params(1, 1, 1, 1, 0, 1.0f, 0.0f);
  EXPECT_EQ(conv3d_forward(x, p).values(), x.values());
  const Tensor g = tensor_rand({2, 1, 3, 4, 5}, 2, 1.0f);
  EXPECT_EQ(conv3d_backward(x, p, g).input.values(), g.values());
}

TEST(Conv3d, OnesKernelCountsOverlappingTaps) {
  const Tensor x({1, 1, 4, 4, 4}, 1.0f);
  const Tensor y = conv3d_forward(x, conv_params(1, 1, 3, 1, 1, 1.0f, 0.0f));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4, 4}));
  EXPECT_EQ(y.at(0, 0, 1, 1, 1), 27.0f);
  EXPECT_EQ(y.at(0, 0, 2, 2, 1), 27.0f);
  EXPECT_EQ(y.at(0, 0, 0, 0, 0), 8.0f);
  EXPECT_EQ(y.at(0, 0, 3, 3, 3), 8.0f);
  EXPECT_EQ(y.at(0, 0, 0, 1, 1), 18.0f);
  EXPECT_EQ(y.at(0, 0, 0, 0, 1), 12.0f);
}

TEST(Conv3d, ValidConvolutionShape) {
  const Tensor x({1, 2, 4, 4, 4}, 0.5f);
  EXPECT_EQ(conv3d_forward(x, conv_params(3, 2, 3, 1, 0, 0.1f, 0.0f)).shape(), (Shape{1, 3, 2, 2, 2}));
}

TEST(Conv3d, ShapeErrors) {
  const Tensor x({1, 2, 4, 4, 4}, 0.5f);
  EXPECT_THROW(conv3d_forward(x, conv_params(3, 1, 3, 1, 0, 0.1f, 0.0f)), ShapeError);
  EXPECT_THROW(conv3d_forward(Tensor({1, 2, 2, 2, 2}, 1.0f), conv_params(1, 2, 3, 1, 0, 1, 0)), ShapeError);
  const auto p = conv_params(1, 2, 3, 1, 1, 1, 0);
  EXPECT_THROW(conv3d_backward(x, p, Tensor({1, 1, 3, 3, 3}, 1.0f)), ShapeError);
}

TEST(Conv3d, ZeroUpstreamGradientGivesZeroGradients) {
  Rng rng(3);
  Conv3dParams<float> p = conv_params(2, 2, 3, 1, 1, 0, 0);
  p.weights = tensor_rand(p.weights.shape(), 4, 1.0f);
  const Tensor x = tensor_rand({1, 2, 4, 4, 4}, 5, 1.0f);
  const auto g = conv3d_backward(x, p, Tensor({1, 2, 4, 4, 4}, 0.0f));
  for (float v : g.input.data()) EXPECT_EQ(v, 0.0f);
  for (float v : g.weights.data()) EXPECT_EQ(v, 0.0f);
  for (float v : g.bias.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Conv3dProperty, OutputShapeMatchesFormula) {
  Rng rng(17);
  for (int trial = 0; trial < 60; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(3));
    const int stride = 1 + static_cast<int>(rng.below(3));
    const int pad = static_cast<int>(rng.below(2));
    const int d = k + static_cast<int>(rng.below(5)), h = k + static_cast<int>(rng.below(5)),
              w = k + static_cast<int>(rng.below(5));
    const Tensor x({1, 1, d, h, w}, 1.0f);
    const Tensor y = conv3d_forward(x, conv_params(2, 1, k, stride, pad, 0.5f, 0.0f));
    EXPECT_EQ(y.shape(), (Shape{1, 2, (d + 2 * pad - k) / stride + 1, (h + 2 * pad - k) / stride + 1,
                                (w + 2 * pad - k) / stride + 1}));
  }
}

TEST(Conv3dProperty, LinearWithoutBias) {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    Conv3dParams<float> p = conv_params(2, 2, 3, 1 + trial % 2, 1, 0, 0);
    p.weights = tensor_rand(p.weights.shape(), 100 + trial, 1.0f);
    const Tensor x = tensor_rand({1, 2, 5, 5, 5}, 200 + trial, 1.0f);
    const float a = static_cast<float>(rng.uniform(-3.0, 3.0));
    Tensor ax = x;
    for (float& v : ax.data()) v *= a;
    const Tensor y = conv3d_forward(x, p), yax = conv3d_forward(ax, p);
    for (std::size_t i = 0; i < y.size(); ++i) {
      EXPECT_NEAR(yax[i], a * y[i], 1e-5 * std::max(1.0f, std::abs(a * y[i])));
    }
  }
}

TEST(MaxPool3d, PicksMaximumAndRoutesGradient) {
  Tensor x({1, 1, 2, 2, 2}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
  const auto r = maxpool3d(x, 2, 2);
  ASSERT_EQ(r.output.size(), 1u);
  EXPECT_EQ(r.output[0], 8.0f);
  const Tensor g = maxpool3d_backward(x.shape(), r.argmax, Tensor({1, 1, 1, 1, 1}, 1.0f));
  EXPECT_EQ(g.values(), (std::vector<float>{0, 0, 0, 0, 0, 0, 0, 1}));
}

TEST(MaxPool3d, TiesGoToLowestIndex) {
  const auto r = maxpool3d(Tensor({1, 1, 2, 2, 2}, 3.0f), 2, 2);
  EXPECT_EQ(r.output[0], 3.0f);
  EXPECT_EQ(r.argmax[0], 0u);
}

TEST(MaxPool3d, ConstantInputGivesConstantOutput) {
  const auto r = maxpool3d(Tensor({1, 2, 6, 6, 6}, -1.5f), 2, 2);
  EXPECT_EQ(r.output.shape(), (Shape{1, 2, 3, 3, 3}));
  for (float v : r.output.data()) EXPECT_EQ(v, -1.5f);
}

TEST(MaxPool3d, UndersizedInputThrows) {
  EXPECT_THROW(maxpool3d(Tensor({1, 1, 1, 2, 2}, 0.0f), 2, 2), ShapeError);
}

TEST(MaxPool3dProperty, IdempotentOnBlockConstantInput) {
  Rng rng(29);
  Tensor x({1, 1, 4, 4, 4});
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int w = 0; w < 4; ++w) x.at(0, 0, z, y, w) = static_cast<float>((z / 2) * 4 + (y / 2) * 2 + (w / 2));
  const Tensor once = maxpool3d(x, 2, 2).output;
  // Upsample back to blocks and pool again.
  Tensor up({1, 1, 4, 4, 4});
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int w = 0; w < 4; ++w) up.at(0, 0, z, y, w) = once.at(0, 0, z / 2, y / 2, w / 2);
  EXPECT_EQ(maxpool3d(up, 2, 2).output.values(), once.values());
  EXPECT_EQ(up.values(), x.values());
}

TEST(Activations, ScalarExamples) {
  EXPECT_EQ(sigmoid_scalar(0.0f), 0.5f);
  const Tensor s = softmax(Tensor({1, 3}, 0.0f));
  for (float v : s.data()) EXPECT_NEAR(v, 1.0f / 3.0f, 1e-7);
  const Tensor r = relu(Tensor({4}, std::vector<float>{-2, -0.0f, 0.5f, 3}));
  EXPECT_EQ(r.values(), (std::vector<float>{0, 0, 0.5f, 3}));
}

TEST(Activations, ReluPropagatesNan) {
  const Tensor r = relu(Tensor({2}, std::vector<float>{std::nanf(""), -1.0f}));
  EXPECT_TRUE(std::isnan(r[0]));
  EXPECT_EQ(r[1], 0.0f);
}

TEST(Activations, SoftmaxRowsSumToOne) {
  const Tensor x = tensor_rand({6, 7}, 31, 20.0f);
  const Tensor s = softmax(x);
  for (int n = 0; n < 6; ++n) {
    double sum = 0;
    for (int k = 0; k < 7; ++k) sum += s[static_cast<std::size_t>(n * 7 + k)];
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Activations, SigmoidStaysInsideUnitInterval) {
  const Tensor x = tensor_rand({1000}, 37, 15.0f);
  const Tensor s = sigmoid(x);
  for (float v : s.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  // Stable branches: no NaN at the extremes.
  EXPECT_EQ(sigmoid_scalar(-1000.0), 0.0);
  EXPECT_EQ(sigmoid_scalar(1000.0), 1.0);
}

TEST(Linear, IdentityWeightsCopyInput) {
  const Tensor x = tensor_rand({3, 4}, 41, 1.0f);
  Tensor w({4, 4}, 0.0f);
  for (int i = 0; i < 4; ++i) w[static_cast<std::size_t>(i * 4 + i)] = 1.0f;
  EXPECT_EQ(linear(x, w, Tensor({4}, 0.0f)).values(), x.values());
  EXPECT_THROW(linear(x, Tensor({3, 4}, 0.0f), Tensor({4}, 0.0f)), ShapeError);
}

TEST(ResidualBlock, ZeroBranchIsRelu) {
  const Tensor x = tensor_rand({1, 2, 4, 4, 4}, 43, 1.0f);
  const auto zero = conv_params(2, 2, 3, 1, 1, 0, 0);
  const Tensor y = residual_block_forward(x, zero, zero);
  EXPECT_EQ(y.values(), relu(x).values());
  EXPECT_EQ(y.shape(), x.shape());
}

TEST(ResidualBlock, ChannelMismatchThrows) {
  const Tensor x = tensor_rand({1, 2, 4, 4, 4}, 43, 1.0f);
  EXPECT_THROW(residual_block_forward(x, conv_params(3, 2, 3, 1, 1, 0, 0), conv_params(2, 3, 3, 1, 1, 0, 0)),
               ShapeError);
}

TEST(ConcatSplit, RoundTrip) {
  const Tensor a = tensor_rand({2, 2, 3, 3, 3}, 47, 1.0f), b = tensor_rand({2, 3, 3, 3, 3}, 53, 1.0f);
  const Tensor c = concat_channels(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 5, 3, 3, 3}));
  const auto [a2, b2] = split_channels(c, 2);
  EXPECT_EQ(a2.values(), a.values());
  EXPECT_EQ(b2.values(), b.values());
}

TEST(GradientCheck, ReluOnPositiveInput) {
  ReLU<float> relu_layer;
  Tensor x = tensor_rand({2, 3, 3, 3, 3}, 59, 1.0f);
  for (float& v : x.data()) v = std::abs(v) + 0.1f;
  EXPECT_LT(gradient_check(relu_layer, x, 1e-3).max_rel_error, 1e-4);
}

TEST(GradientCheck, LinearWithZeroWeights) {
  Linear<float> lin(4, 3);
  const Tensor x = tensor_rand({2, 4}, 61, 1.0f);
  const auto r = gradient_check(lin, x, 1e-3);
  EXPECT_LT(r.max_rel_error, 1e-4);
  // d sum / d bias = batch size for every output.
  lin.zero_grad();
  const Tensor y = lin.forward(x);
  lin.backward(Tensor(y.shape(), 1.0f));
  for (float g : lin.bias().grad()) EXPECT_EQ(g, 2.0f);
}

TEST(GradientCheck, IdentityPointwiseConv) {
  Conv3d<float> conv(conv_params(1, 1, 1, 1, 0, 1.0f, 0.0f));
  EXPECT_LT(gradient_check(conv, tensor_rand({1, 1, 3, 3, 3}, 67, 1.0f), 1e-3).max_rel_error, 1e-4);
}

TEST(GradientCheck, FloatLayersWithinTolerance) {
  Conv3d<float> conv(2, 2, 3, 1, 1);
  conv.init(71);
  EXPECT_LT(gradient_check(conv, tensor_rand({1, 2, 4, 4, 4}, 73, 1.0f), 1e-2).max_rel_error, 1e-3);

  MaxPool3d<float> pool(2, 2);
  Tensor px({1, 1, 4, 4, 4});
  const auto perm = Rng(79).permutation(64);
  for (std::size_t i = 0; i < 64; ++i) px[i] = 0.05f * static_cast<float>(perm[i]);
  EXPECT_LT(gradient_check(pool, px, 1e-3).max_rel_error, 1e-3);

  Sigmoid<float> sig;
  EXPECT_LT(gradient_check(sig, tensor_rand({3, 4}, 83, 2.0f), 1e-2).max_rel_error, 1e-3);
}

TEST(GradientCheck, NonFiniteForwardIsNumericError) {
  Linear<float> lin(2, 1);
  Tensor x({1, 2}, std::numeric_limits<float>::infinity());
  EXPECT_THROW(gradient_check(lin, x), NumericError);
}

TEST(GradcheckSuite, EveryComponentPasses) {
  const auto results = run_gradcheck_suite(42);
  EXPECT_EQ(results.size(), gradcheck_components().size());
  for (const auto& r : results) {
    EXPECT_LE(r.max_rel_error, kGradcheckTolerance) << r.component << " worst at " << r.worst_entry;
    EXPECT_GT(r.entries_checked, 0u) << r.component;
  }
}

TEST(GradcheckSuite, CorruptedBackwardIsCaught) {
  for (const std::string name : {"softmax", "dual_path"}) {
    const auto results = run_gradcheck_suite(42, name);
    for (const auto& r : results) {
      if (r.component == name) {
        EXPECT_FALSE(r.passed()) << name;
      } else {
        EXPECT_TRUE(r.passed()) << r.component;
      }
    }
  }
  EXPECT_THROW(run_gradcheck_suite(42, "no_such_layer"), ConfigError);
}
