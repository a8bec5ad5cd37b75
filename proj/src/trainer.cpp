#include "pnd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "pnd/error.hpp"
#include "pnd/rng.hpp"

namespace pnd {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!std::isfinite(clip_norm)) throw ConfigError("clip_norm must be finite");
}

template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, std::span<T> velocity, double learning_rate,
              double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw ShapeError("sgd_step: parameter, gradient and velocity sizes differ (" + std::to_string(params.size()) +
                     ", " + std::to_string(grads.size()) + ", " + std::to_string(velocity.size()) + ")");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = static_cast<T>(momentum * velocity[i] - learning_rate * grads[i]);
    params[i] += velocity[i];
  }
}

template void sgd_step(std::span<float>, std::span<const float>, std::span<float>, double, double);
template void sgd_step(std::span<double>, std::span<const double>, std::span<double>, double, double);

double clip_gradients(const NamedParams<float>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    for (float g : p->grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
    const auto scale = static_cast<float>(max_norm / norm);
    for (const auto& [name, p] : params) {
      for (float& g : p->grad()) g *= scale;
    }
  }
  return norm;
}

SgdOptimizer::SgdOptimizer(NamedParams<float> params, const OptimizerConfig& config)
    : params_(std::move(params)), config_(config) {
  config_.validate();
  for (auto& [name, p] : params_) {
    p->enable_grad();
    velocity_.emplace_back(p->size(), 0.0f);
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& [name, p] : params_) p->zero_grad();
}

void SgdOptimizer::step() {
  clip_gradients(params_, config_.clip_norm);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    BasicTensor<float>& p = *params_[k].second;
    const std::span<const float> g = p.grad();
    sgd_step<float>(p.data(), g, velocity_[k], config_.learning_rate, config_.momentum);
  }
}

std::string write_loss_csv(const TrainLog& log) {
  std::string out = "epoch,batch,loss\n";
  char buf[96];
  for (const auto& r : log.records) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.9g\n", r.epoch, r.batch, r.loss);
    out += buf;
  }
  return out;
}

BBox3D annotation_box(const Volume& volume, const Annotation& annotation, const Index3& offset) {
  const Vec3 v = world_to_voxel(volume, annotation.center_world);
  BBox3D box;
  for (int a = 0; a < 3; ++a) {
    box.center[a] = v[a] - offset[a] + kVoxelCenterOffset;
    box.size[a] = annotation.diameter_mm / volume.spacing[a];
  }
  return box;
}

namespace {

int clamp_offset(int offset, int dim, int size) {
  return std::clamp(offset, std::min(0, dim - size), std::max(0, dim - size));
}

Stage1Crop make_crop(const LabeledScan& scan, const Index3& offset, int size) {
  Stage1Crop c;
  c.patch = extract_patch(scan.volume, offset, size);
  for (const Annotation& a : scan.annotations) {
    const BBox3D box = annotation_box(scan.volume, a, offset);
    const bool inside = box.center[0] >= 0 && box.center[0] < size && box.center[1] >= 0 &&
                        box.center[1] < size && box.center[2] >= 0 && box.center[2] < size;
    (inside ? c.boxes : c.ignore).push_back(box);
  }
  return c;
}

}  // namespace

std::vector<Stage1Crop> sample_stage1_crops(const std::vector<LabeledScan>& scans, int crop_size,
                                            std::uint64_t seed) {
  std::vector<Stage1Crop> crops;
  const int jitter = crop_size / 4;
  for (std::size_t s = 0; s < scans.size(); ++s) {
    const LabeledScan& scan = scans[s];
    Rng rng(derive_seed(seed, s));
    const Index3& dims = scan.volume.dims;
    if (!scan.annotations.empty()) {
      const Annotation& a = scan.annotations[rng.below(scan.annotations.size())];
      const Vec3 v = world_to_voxel(scan.volume, a.center_world);
      Index3 off{};
      for (int k = 0; k < 3; ++k) {
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * jitter + 1))) - jitter;
        off[k] = clamp_offset(static_cast<int>(std::lround(v[k])) - crop_size / 2 + j, dims[k], crop_size);
      }
      crops.push_back(make_crop(scan, off, crop_size));
    }
    Index3 off{};
    for (int k = 0; k < 3; ++k) {
      const int lo = std::min(0, dims[k] - crop_size), hi = std::max(0, dims[k] - crop_size);
      off[k] = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    }
    crops.push_back(make_crop(scan, off, crop_size));
  }
  return crops;
}

Stage1Loss stage1_loss(const RpnOutput<float>& output, const AnchorSet& anchors, const Stage1Crop& crop,
                       const RpnConfig& rpn, const FocalLossConfig& focal, std::uint64_t seed) {
  const std::size_t n = anchors.anchors.size();
  const std::size_t cells = anchors.cells();
  if (output.logits.size() != n || output.deltas.size() != 6 * n) {
    throw ShapeError("stage1_loss: network output does not match the anchor set");
  }
  AnchorTargets t = assign_anchor_labels(anchors, crop.boxes, rpn.pos_iou, rpn.neg_iou);
  for (std::size_t i = 0; i < n; ++i) {
    if (t.labels[i] != AnchorLabel::Negative) continue;
    for (const BBox3D& b : crop.ignore) {
      if (iou_3d(anchors.anchors[i], b) > rpn.neg_iou) {
        t.labels[i] = AnchorLabel::Ignore;
        break;
      }
    }
  }

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) {
    if (t.labels[i] == AnchorLabel::Positive) pos.push_back(i);
    if (t.labels[i] == AnchorLabel::Negative) neg.push_back(i);
  }
  const auto wanted = std::max(static_cast<std::size_t>(std::ceil(rpn.negative_ratio * pos.size())),
                               static_cast<std::size_t>(rpn.min_negatives));
  const std::size_t n_neg = std::min(wanted, neg.size());
  const std::size_t n_hard = n_neg - n_neg / 2;
  std::stable_sort(neg.begin(), neg.end(),
                   [&](std::size_t a, std::size_t b) { return output.logits[a] > output.logits[b]; });
  Rng rng(seed);
  for (std::size_t k = n_hard; k < n_neg; ++k) {
    const std::size_t j = k + rng.below(neg.size() - k);
    std::swap(neg[k], neg[j]);
  }
  neg.resize(n_neg);

  Stage1Loss r;
  r.grad_logits = Tensor(output.logits.shape(), 0.0f);
  r.grad_deltas = Tensor(output.deltas.shape(), 0.0f);
  const double n_sel = static_cast<double>(pos.size() + neg.size());
  auto add_cls = [&](std::size_t i, bool positive) {
    const double p = sigmoid_scalar(static_cast<double>(output.logits[i]));
    const LossValue l = focal_loss(positive ? p : 1.0 - p, focal);
    r.classification += l.loss / n_sel;
    const double dg_dlogit = (positive ? 1.0 : -1.0) * p * (1.0 - p);
    r.grad_logits[i] = static_cast<float>(l.grad * dg_dlogit / n_sel);
  };
  for (std::size_t i : pos) add_cls(i, true);
  for (std::size_t i : neg) add_cls(i, false);

  if (!pos.empty()) {
    const double inv = 1.0 / static_cast<double>(pos.size());
    for (std::size_t i : pos) {
      const std::size_t a = i / cells, cell = i % cells;
      for (std::size_t j = 0; j < 6; ++j) {
        const std::size_t idx = (a * 6 + j) * cells + cell;
        const LossValue l = smooth_l1(output.deltas[idx], t.deltas[i][j], rpn.smooth_l1_beta);
        r.regression += l.loss * inv;
        r.grad_deltas[idx] = static_cast<float>(l.grad * inv);
      }
    }
  }
  r.loss = r.classification + r.regression;
  return r;
}

namespace {

template <typename Body>
TrainLog run_epochs(const OptimizerConfig& opt, const std::string& tag, SgdOptimizer& optimizer,
                    const EpochCallback& on_epoch, Body&& epoch_samples) {
  TrainLog log;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(derive_seed(opt.seed, tag), static_cast<std::uint64_t>(epoch));
    auto [count, run_sample] = epoch_samples(epoch_seed);
    const std::vector<int> order = Rng(derive_seed(epoch_seed, "order")).permutation(static_cast<int>(count));
    double epoch_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      optimizer.zero_grad();
      double loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        loss += run_sample(static_cast<std::size_t>(order[k]), scale, derive_seed(epoch_seed, k)) * scale;
      }
      if (!std::isfinite(loss)) {
        throw DivergedError("training diverged at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batches) + " (non-finite loss)");
      }
      optimizer.step();
      log.records.push_back({epoch, batches, loss});
      epoch_sum += loss;
      ++batches;
    }
    const double mean = batches > 0 ? epoch_sum / batches : 0.0;
    log.epoch_means.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return log;
}

Tensor scaled(const Tensor& t, double s) {
  Tensor out = t;
  for (float& v : out.data()) v = static_cast<float>(v * s);
  return out;
}

Tensor flipped(const Tensor& t, bool fz, bool fy, bool fx) {
  if (!fz && !fy && !fx) return t;
  const Shape& s = t.shape();
  Tensor out(s, 0.0f);
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c)
      for (int z = 0; z < s[2]; ++z)
        for (int y = 0; y < s[3]; ++y)
          for (int x = 0; x < s[4]; ++x)
            out.at(n, c, z, y, x) =
                t.at(n, c, fz ? s[2] - 1 - z : z, fy ? s[3] - 1 - y : y, fx ? s[4] - 1 - x : x);
  return out;
}

}  // namespace

TrainLog train_stage1(const std::vector<LabeledScan>& scans, RpnModel& model, const RpnConfig& rpn,
                      const OptimizerConfig& optimizer, const FocalLossConfig& focal,
                      const EpochCallback& on_epoch) {
  optimizer.validate();
  rpn.validate();
  focal.validate();
  if (optimizer.epochs == 0) return {};
  if (scans.empty()) throw ConfigError("stage-1 training needs at least one scan");
  if (model.feature_stride() != rpn.feature_stride) {
    throw ConfigError("model feature stride does not match the configured one");
  }
  const int size = rpn.train_patch_size;
  const AnchorSet anchors = generate_anchors({size, size, size}, rpn.feature_stride, model.anchor_scales());
  SgdOptimizer opt(model.parameters(), optimizer);

  std::vector<Stage1Crop> crops;
  return run_epochs(optimizer, "stage1", opt, on_epoch, [&](std::uint64_t epoch_seed) {
    crops = sample_stage1_crops(scans, size, derive_seed(epoch_seed, "crops"));
    auto run = [&](std::size_t i, double scale, std::uint64_t sample_seed) {
      const RpnOutput<float> out = model.forward(crops[i].patch);
      const Stage1Loss l = stage1_loss(out, anchors, crops[i], rpn, focal, sample_seed);
      if (std::isfinite(l.loss)) model.backward(scaled(l.grad_logits, scale), scaled(l.grad_deltas, scale));
      return l.loss;
    };
    return std::pair{crops.size(), std::function<double(std::size_t, double, std::uint64_t)>(run)};
  });
}

TrainLog train_stage2(const std::vector<CropSample>& samples, FprModel& model, const OptimizerConfig& optimizer,
                      const FocalLossConfig& focal, const EpochCallback& on_epoch) {
  optimizer.validate();
  focal.validate();
  if (optimizer.epochs == 0) return {};
  const auto positives = std::count_if(samples.begin(), samples.end(), [](const CropSample& s) { return s.label == 1; });
  const auto negatives = std::count_if(samples.begin(), samples.end(), [](const CropSample& s) { return s.label == 0; });
  if (positives == 0 || negatives == 0 || positives + negatives != static_cast<long>(samples.size())) {
    throw ConfigError("stage-2 training needs labels in {0,1} with both classes present (got " +
                      std::to_string(positives) + " positive, " + std::to_string(negatives) + " negative)");
  }
  SgdOptimizer opt(model.parameters(), optimizer);
  return run_epochs(optimizer, "stage2", opt, on_epoch, [&](std::uint64_t) {
    auto run = [&](std::size_t i, double scale, std::uint64_t sample_seed) {
      Rng rng(sample_seed);
      const bool fz = rng.below(2) == 1, fy = rng.below(2) == 1, fx = rng.below(2) == 1;
      const Tensor logit = model.forward(flipped(samples[i].crop, fz, fy, fx));
      const double p = sigmoid_scalar(static_cast<double>(logit[0]));
      const bool positive = samples[i].label == 1;
      const LossValue l = focal_loss(positive ? p : 1.0 - p, focal);
      if (std::isfinite(l.loss)) {
        const double g = l.grad * (positive ? 1.0 : -1.0) * p * (1.0 - p) * scale;
        model.backward(Tensor(logit.shape(), static_cast<float>(g)));
      }
      return l.loss;
    };
    return std::pair{samples.size(), std::function<double(std::size_t, double, std::uint64_t)>(run)};
  });
}

}  // namespace pnd
