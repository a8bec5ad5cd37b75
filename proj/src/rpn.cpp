#include "pnd/rpn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pnd/error.hpp"
#include "pnd/rng.hpp"

namespace pnd {

AnchorSet generate_anchors(const Index3& patch_dims, int feature_stride,
                           const std::vector<double>& scales) {
  if (feature_stride < 1) throw ConfigError("feature stride must be >= 1");
  if (scales.empty()) throw ConfigError("at least one anchor scale is required");
  for (double s : scales) {
    if (!(s > 0.0)) throw ConfigError("anchor scales must be positive");
  }
  AnchorSet set;
  set.feature_stride = feature_stride;
  set.scales = scales;
  for (int a = 0; a < 3; ++a) {
    if (patch_dims[a] < feature_stride || patch_dims[a] % feature_stride != 0) {
      throw ConfigError("patch dim " + std::to_string(patch_dims[a]) +
                        " is not divisible by feature stride " + std::to_string(feature_stride));
    }
    set.feature_dims[a] = patch_dims[a] / feature_stride;
  }
  const auto& f = set.feature_dims;
  set.anchors.reserve(scales.size() * set.cells());
  for (double s : scales) {
    for (int z = 0; z < f[0]; ++z) {
      for (int y = 0; y < f[1]; ++y) {
        for (int x = 0; x < f[2]; ++x) {
          set.anchors.push_back({{(z + 0.5) * feature_stride, (y + 0.5) * feature_stride,
                                  (x + 0.5) * feature_stride},
                                 {s, s, s}});
        }
      }
    }
  }
  return set;
}

namespace {

BoxDeltas deltas_at(const Tensor& deltas, std::size_t anchor, std::size_t cells) {
  const std::size_t a = anchor / cells, cell = anchor % cells;
  BoxDeltas d{};
  for (std::size_t j = 0; j < 6; ++j) d[j] = deltas[(a * 6 + j) * cells + cell];
  return d;
}

}  // namespace

std::vector<BBox3D> decode_boxes(const AnchorSet& anchors, const Tensor& deltas,
                                 const Vec3& bounds) {
  if (deltas.size() != anchors.anchors.size() * 6) {
    throw ShapeError("decode_boxes: " + std::to_string(deltas.size()) + " deltas for " +
                     std::to_string(anchors.anchors.size()) + " anchors");
  }
  std::vector<BBox3D> out;
  out.reserve(anchors.anchors.size());
  const std::size_t cells = anchors.cells();
  for (std::size_t i = 0; i < anchors.anchors.size(); ++i) {
    out.push_back(clip_box(decode_box(anchors.anchors[i], deltas_at(deltas, i, cells)), bounds));
  }
  return out;
}

AnchorTargets assign_anchor_labels(const AnchorSet& anchors, const std::vector<BBox3D>& gt_boxes,
                                   double pos_iou, double neg_iou) {
  if (anchors.anchors.empty()) throw ConfigError("assign_anchor_labels: empty anchor set");
  if (!(pos_iou > neg_iou)) throw ConfigError("assign_anchor_labels: pos_iou must exceed neg_iou");
  const std::size_t n = anchors.anchors.size();
  AnchorTargets t;
  t.labels.assign(n, AnchorLabel::Negative);
  t.deltas.assign(n, BoxDeltas{});
  t.max_iou.assign(n, 0.0);
  t.matched_gt.assign(n, -1);
  if (gt_boxes.empty()) return t;

  std::vector<double> best_for_gt(gt_boxes.size(), -1.0);
  std::vector<std::size_t> best_anchor_for_gt(gt_boxes.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const BBox3D& a = anchors.anchors[i];
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double iou = iou_3d(a, gt_boxes[g]);
      if (iou > t.max_iou[i] || t.matched_gt[i] < 0) {
        t.max_iou[i] = iou;
        t.matched_gt[i] = static_cast<int>(g);
      }
      if (iou > best_for_gt[g]) {
        best_for_gt[g] = iou;
        best_anchor_for_gt[g] = i;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (t.max_iou[i] >= pos_iou) {
      t.labels[i] = AnchorLabel::Positive;
    } else if (t.max_iou[i] <= neg_iou) {
      t.labels[i] = AnchorLabel::Negative;
    } else {
      t.labels[i] = AnchorLabel::Ignore;
    }
  }
  for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
    if (best_for_gt[g] <= 0.0) continue;  // box lies entirely outside the anchor grid
    const std::size_t i = best_anchor_for_gt[g];
    t.labels[i] = AnchorLabel::Positive;
    t.matched_gt[i] = static_cast<int>(g);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (t.labels[i] == AnchorLabel::Positive) {
      t.deltas[i] = encode_box(gt_boxes[static_cast<std::size_t>(t.matched_gt[i])], anchors.anchors[i]);
    }
  }
  return t;
}

int RpnConfig::tapped_stages() const {
  int stages = 0;
  int s = feature_stride;
  while (s > 1 && s % 2 == 0) {
    s /= 2;
    ++stages;
  }
  return stages;
}

void RpnConfig::validate() const {
  if (feature_stride < 2 || (feature_stride & (feature_stride - 1)) != 0) {
    throw ConfigError("feature_stride must be a power of two >= 2");
  }
  if (static_cast<int>(backbone_channels.size()) < tapped_stages()) {
    throw ConfigError("backbone needs at least " + std::to_string(tapped_stages()) +
                      " stages for feature_stride " + std::to_string(feature_stride));
  }
  for (int c : backbone_channels) {
    if (c < 1) throw ConfigError("backbone channels must be >= 1");
  }
  if (head_channels < 1) throw ConfigError("head_channels must be >= 1");
  if (anchor_scales.empty()) throw ConfigError("anchor_scales must not be empty");
  for (double s : anchor_scales) {
    if (!(s > 0.0)) throw ConfigError("anchor scales must be positive");
  }
  if (patch_size % feature_stride != 0 || train_patch_size % feature_stride != 0) {
    throw ConfigError("patch sizes must be divisible by feature_stride");
  }
  if (overlap < 0 || overlap >= patch_size) throw ConfigError("overlap must be in [0, patch_size)");
  if (!(pos_iou > neg_iou && neg_iou >= 0.0 && pos_iou <= 1.0)) {
    throw ConfigError("require 0 <= neg_iou < pos_iou <= 1");
  }
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("nms_iou must be in (0, 1]");
  if (max_candidates < 1 || pre_nms_top < 1) throw ConfigError("candidate limits must be >= 1");
  if (!(negative_ratio > 0.0) || min_negatives < 0) throw ConfigError("invalid negative sampling");
  if (!(smooth_l1_beta > 0.0)) throw ConfigError("smooth_l1_beta must be > 0");
}

template <typename T>
VggStage<T>::VggStage(int in_channels, int out_channels)
    : conv1_(in_channels, out_channels, 3, 1, 1), conv2_(out_channels, out_channels, 3, 1, 1),
      pool_(2, 2) {}

template <typename T>
BasicTensor<T> VggStage<T>::forward(const BasicTensor<T>& input) {
  return pool_.forward(relu2_.forward(conv2_.forward(relu1_.forward(conv1_.forward(input)))));
}

template <typename T>
BasicTensor<T> VggStage<T>::backward(const BasicTensor<T>& g) {
  return conv1_.backward(relu1_.backward(conv2_.backward(relu2_.backward(pool_.backward(g)))));
}

template <typename T>
void VggStage<T>::collect_parameters(const std::string& prefix, NamedParams<T>& out) {
  conv1_.collect_parameters(prefix + "conv1.", out);
  conv2_.collect_parameters(prefix + "conv2.", out);
}

template <typename T>
void VggStage<T>::init(std::uint64_t seed) {
  conv1_.init(derive_seed(seed, "conv1"));
  conv2_.init(derive_seed(seed, "conv2"));
}

template <typename T>
RpnNet<T>::RpnNet(const std::vector<int>& stage_channels, int head_channels,
                  std::vector<double> anchor_scales)
    : stage_channels_(stage_channels),
      head_channels_(head_channels),
      anchor_scales_(std::move(anchor_scales)),
      head_(stage_channels.empty() ? 1 : stage_channels.back(), head_channels, 3, 1, 1),
      cls_(head_channels, static_cast<int>(anchor_scales_.size()), 1, 1, 0),
      reg_(head_channels, 6 * static_cast<int>(anchor_scales_.size()), 1, 1, 0) {
  if (stage_channels_.empty()) throw ConfigError("RPN needs at least one backbone stage");
  int in = 1;
  for (int c : stage_channels_) {
    stages_.emplace_back(in, c);
    in = c;
  }
}

namespace {

std::vector<int> tapped(const RpnConfig& c) {
  c.validate();
  return {c.backbone_channels.begin(), c.backbone_channels.begin() + c.tapped_stages()};
}

}  // namespace

template <typename T>
RpnNet<T>::RpnNet(const RpnConfig& config)
    : RpnNet(tapped(config), config.head_channels, config.anchor_scales) {}

template <typename T>
void RpnNet<T>::init(std::uint64_t seed) {
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    stages_[i].init(derive_seed(seed, "stage" + std::to_string(i)));
  }
  head_.init(derive_seed(seed, "head"));
  cls_.init(derive_seed(seed, "cls"));
  reg_.init(derive_seed(seed, "reg"));
  // Small output layers keep initial objectness near 0.5 and deltas near 0.
  for (auto& w : cls_.params().weights.data()) w *= T(0.1);
  for (auto& w : reg_.params().weights.data()) w *= T(0.1);
}

template <typename T>
RpnOutput<T> RpnNet<T>::forward(const BasicTensor<T>& patch) {
  BasicTensor<T> x = patch;
  for (auto& s : stages_) x = s.forward(x);
  const BasicTensor<T> h = head_relu_.forward(head_.forward(x));
  return {cls_.forward(h), reg_.forward(h)};
}

template <typename T>
BasicTensor<T> RpnNet<T>::backward(const BasicTensor<T>& grad_logits,
                                   const BasicTensor<T>& grad_deltas) {
  BasicTensor<T> gh = cls_.backward(grad_logits);
  const BasicTensor<T> gr = reg_.backward(grad_deltas);
  for (std::size_t i = 0; i < gh.size(); ++i) gh[i] += gr[i];
  BasicTensor<T> g = head_.backward(head_relu_.backward(gh));
  for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) g = it->backward(g);
  return g;
}

template <typename T>
NamedParams<T> RpnNet<T>::parameters() {
  NamedParams<T> out;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    stages_[i].collect_parameters("backbone.stage" + std::to_string(i) + ".", out);
  }
  head_.collect_parameters("head.conv.", out);
  cls_.collect_parameters("head.cls.", out);
  reg_.collect_parameters("head.reg.", out);
  return out;
}

template <typename T>
void RpnNet<T>::zero_grad() {
  for (auto& [name, p] : parameters()) {
    p->enable_grad();
    p->zero_grad();
  }
}

template class VggStage<float>;
template class VggStage<double>;
template class RpnNet<float>;
template class RpnNet<double>;

RpnResult rpn_forward(const Tensor& patch, RpnModel& model) {
  const Shape& s = patch.shape();
  const int stride = model.feature_stride();
  if (s.size() != 5 || s[0] != 1 || s[1] != 1 || s[2] != s[3] || s[2] != s[4] ||
      s[2] % stride != 0) {
    throw ShapeError("rpn_forward expects a (1,1,S,S,S) patch with S divisible by " +
                     std::to_string(stride) + ", got " + shape_to_string(s));
  }
  RpnOutput<float> out = model.forward(patch);
  const int f = s[2] / stride;
  const int a = model.num_anchors();
  return {sigmoid(out.logits).reshaped({a, f, f, f}), out.deltas.reshaped({6 * a, f, f, f})};
}

std::vector<Candidate> propose(const Volume& volume, RpnModel& model, const RpnConfig& config,
                               const std::string& scan_id) {
  config.validate();
  if (volume.voxel_count() == 0 || volume.data.size() != volume.voxel_count()) {
    throw InputError("propose: empty or malformed volume");
  }
  if (model.feature_stride() != config.feature_stride) {
    throw ConfigError("model feature stride " + std::to_string(model.feature_stride()) +
                      " does not match configured " + std::to_string(config.feature_stride));
  }
  const int P = config.patch_size;
  const AnchorSet anchors = generate_anchors({P, P, P}, config.feature_stride, model.anchor_scales());
  const std::size_t cells = anchors.cells();
  const auto max_keep = static_cast<std::size_t>(config.max_candidates);

  std::vector<Proposal> pooled;
  for (const Index3& off : tile_offsets(volume.dims, P, config.overlap)) {
    const RpnResult r = rpn_forward(extract_patch(volume, off, P), model);
    const Vec3 bounds{static_cast<double>(std::min(P, volume.dims[0] - off[0])),
                      static_cast<double>(std::min(P, volume.dims[1] - off[1])),
                      static_cast<double>(std::min(P, volume.dims[2] - off[2]))};

    std::vector<std::size_t> order(anchors.anchors.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return r.objectness[a] > r.objectness[b];
    });
    order.resize(std::min(order.size(), static_cast<std::size_t>(config.pre_nms_top)));

    std::vector<Proposal> local;
    local.reserve(order.size());
    for (std::size_t i : order) {
      const BBox3D box = clip_box(decode_box(anchors.anchors[i], deltas_at(r.deltas, i, cells)), bounds);
      local.push_back({box, static_cast<double>(r.objectness[i])});
    }
    for (Proposal p : nms_3d(local, config.nms_iou, max_keep)) {
      for (int a = 0; a < 3; ++a) p.box.center[a] += off[a];
      pooled.push_back(p);
    }
  }

  std::vector<Candidate> out;
  for (const Proposal& p : nms_3d(pooled, config.nms_iou, max_keep)) {
    Vec3 voxel{};
    for (int a = 0; a < 3; ++a) {
      voxel[a] = std::clamp(p.box.center[a] - kVoxelCenterOffset, -0.5, volume.dims[a] - 0.5);
    }
    out.push_back({scan_id, voxel_to_world(volume, voxel), std::clamp(p.objectness, 0.0, 1.0)});
  }
  return out;
}

}  // namespace pnd
