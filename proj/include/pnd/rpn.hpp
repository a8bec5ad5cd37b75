#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pnd/boxes.hpp"
#include "pnd/layers.hpp"
#include "pnd/records.hpp"
#include "pnd/volume.hpp"

namespace pnd {

// Box coordinates inside a patch are edge-based: voxel j spans [j, j+1), so a
// voxel-index position p corresponds to box coordinate p + 0.5.
constexpr double kVoxelCenterOffset = 0.5;

struct AnchorSet {
  std::vector<BBox3D> anchors;  // scale-major, then z, y, x
  int feature_stride = 4;
  std::vector<double> scales;   // cube edge lengths, voxels
  Index3 feature_dims{0, 0, 0};

  std::size_t cells() const {
    return static_cast<std::size_t>(feature_dims[0]) * feature_dims[1] * feature_dims[2];
  }
};

// One cubic anchor per scale centered at (i + 0.5) * stride of every feature
// cell. Throws ConfigError when a patch dim is not divisible by the stride.
AnchorSet generate_anchors(const Index3& patch_dims, int feature_stride,
                           const std::vector<double>& scales);

// `deltas` is the (A*6, F, F, F) regression map (or any tensor with the same
// element order). Decoded boxes are clipped to `bounds`.
std::vector<BBox3D> decode_boxes(const AnchorSet& anchors, const Tensor& deltas,
                                 const Vec3& bounds);

enum class AnchorLabel : std::int8_t { Ignore = -1, Negative = 0, Positive = 1 };

struct AnchorTargets {
  std::vector<AnchorLabel> labels;
  std::vector<BoxDeltas> deltas;  // encoded targets; meaningful for positives
  std::vector<double> max_iou;
  std::vector<int> matched_gt;    // -1 when there is no ground truth
};

// IoU >= pos_iou -> positive, IoU <= neg_iou -> negative, otherwise ignored;
// each ground-truth box additionally claims its highest-IoU anchor.
AnchorTargets assign_anchor_labels(const AnchorSet& anchors, const std::vector<BBox3D>& gt_boxes,
                                   double pos_iou, double neg_iou);

struct RpnConfig {
  std::vector<int> backbone_channels{8, 16, 32, 64};
  int head_channels = 32;
  int feature_stride = 4;
  std::vector<double> anchor_scales{6.0, 10.0, 16.0};
  int patch_size = 96;
  int overlap = 32;
  double pos_iou = 0.3;
  double neg_iou = 0.02;
  double nms_iou = 0.1;
  int max_candidates = 200;
  int pre_nms_top = 1000;
  // Training-only knobs.
  int train_patch_size = 96;
  double negative_ratio = 3.0;
  int min_negatives = 16;
  double smooth_l1_beta = 1.0 / 9.0;

  // Number of conv-conv-pool stages feeding the head: log2(feature_stride).
  int tapped_stages() const;
  void validate() const;
};

// conv3(pad 1) -> relu -> conv3(pad 1) -> relu -> maxpool(2, 2)
template <typename T>
class VggStage : public Differentiable<T> {
 public:
  VggStage(int in_channels, int out_channels);
  BasicTensor<T> forward(const BasicTensor<T>& input) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_output) override;
  void collect_parameters(const std::string& prefix, NamedParams<T>& out) override;
  std::string name() const override { return "vgg_stage"; }
  void init(std::uint64_t seed);

 private:
  Conv3d<T> conv1_;
  ReLU<T> relu1_;
  Conv3d<T> conv2_;
  ReLU<T> relu2_;
  MaxPool3d<T> pool_;
};

template <typename T>
struct RpnOutput {
  BasicTensor<T> logits;  // (1, A, F, F, F)
  BasicTensor<T> deltas;  // (1, 6A, F, F, F)
};

// Backbone of VGG stages up to the feature stride, then a 3x3x3 conv + relu
// shared by two sibling 1x1x1 convs: objectness logits and box deltas.
template <typename T>
class RpnNet {
 public:
  RpnNet(const std::vector<int>& stage_channels, int head_channels,
         std::vector<double> anchor_scales);
  explicit RpnNet(const RpnConfig& config);

  RpnOutput<T> forward(const BasicTensor<T>& patch);
  // Accumulates parameter gradients; returns d/d patch.
  BasicTensor<T> backward(const BasicTensor<T>& grad_logits, const BasicTensor<T>& grad_deltas);

  NamedParams<T> parameters();
  void zero_grad();
  void init(std::uint64_t seed);

  int feature_stride() const { return 1 << static_cast<int>(stages_.size()); }
  int num_anchors() const { return static_cast<int>(anchor_scales_.size()); }
  const std::vector<double>& anchor_scales() const { return anchor_scales_; }
  const std::vector<int>& stage_channels() const { return stage_channels_; }
  int head_channels() const { return head_channels_; }

 private:
  std::vector<int> stage_channels_;
  int head_channels_;
  std::vector<double> anchor_scales_;
  std::vector<VggStage<T>> stages_;
  Conv3d<T> head_;
  ReLU<T> head_relu_;
  Conv3d<T> cls_;
  Conv3d<T> reg_;
};

using RpnModel = RpnNet<float>;

struct RpnResult {
  Tensor objectness;  // (A, F, F, F), post-sigmoid
  Tensor deltas;      // (6A, F, F, F)
};

// Throws ShapeError unless the patch is (1, 1, S, S, S) with S divisible by
// the model's feature stride.
RpnResult rpn_forward(const Tensor& patch, RpnModel& model);

// Tiles the volume, scores every patch, decodes and de-duplicates boxes per
// patch, maps them to world coordinates and runs a global NMS. Returns at most
// `max_candidates`, sorted by descending objectness.
std::vector<Candidate> propose(const Volume& volume, RpnModel& model, const RpnConfig& config,
                               const std::string& scan_id);

}  // namespace pnd
