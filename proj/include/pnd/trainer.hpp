#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pnd/fpr.hpp"
#include "pnd/losses.hpp"
#include "pnd/records.hpp"
#include "pnd/rpn.hpp"
#include "pnd/volume.hpp"

namespace pnd {

struct OptimizerConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 4;
  int epochs = 10;
  std::uint64_t seed = 42;
  double clip_norm = 5.0;  // <= 0 disables clipping

  // epochs may be 0 (no-op training).
  void validate() const;
};

// v <- momentum * v - lr * g; p <- p + v. Throws ShapeError on size mismatch.
template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, std::span<T> velocity, double learning_rate,
              double momentum);

// Rescales all gradient buffers so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_gradients(const NamedParams<float>& params, double max_norm);

// Momentum SGD over a fixed parameter set; velocity starts at zero.
class SgdOptimizer {
 public:
  SgdOptimizer(NamedParams<float> params, const OptimizerConfig& config);
  // Clips, then applies one update from the current gradient buffers.
  void step();
  void zero_grad();

 private:
  NamedParams<float> params_;
  OptimizerConfig config_;
  std::vector<std::vector<float>> velocity_;
};

struct LossRecord {
  int epoch = 0;
  int batch = 0;
  double loss = 0.0;
};

struct TrainLog {
  std::vector<LossRecord> records;
  std::vector<double> epoch_means;
};

// `epoch,batch,loss` header plus one row per batch.
std::string write_loss_csv(const TrainLog& log);

// Called after each epoch with (epoch, mean loss).
using EpochCallback = std::function<void(int, double)>;

struct LabeledScan {
  std::string scan_id;
  Volume volume;
  std::vector<Annotation> annotations;
};

struct Stage1Crop {
  Tensor patch;                // (1,1,S,S,S)
  std::vector<BBox3D> boxes;   // nodules centred inside the crop
  std::vector<BBox3D> ignore;  // nodules centred outside it
};

// Box in patch coordinates for an annotation, given the patch offset.
BBox3D annotation_box(const Volume& volume, const Annotation& annotation, const Index3& offset);

// Per epoch each scan contributes one crop around a random nodule (jittered)
// and one crop at a random position.
std::vector<Stage1Crop> sample_stage1_crops(const std::vector<LabeledScan>& scans, int crop_size,
                                            std::uint64_t seed);

struct Stage1Loss {
  double loss = 0.0;
  double classification = 0.0;
  double regression = 0.0;
  Tensor grad_logits;
  Tensor grad_deltas;
};

// Focal loss over positives plus sampled negatives (half hardest, half random)
// and smooth-L1 over positive deltas; returns gradients w.r.t. the raw maps.
Stage1Loss stage1_loss(const RpnOutput<float>& output, const AnchorSet& anchors, const Stage1Crop& crop,
                       const RpnConfig& rpn, const FocalLossConfig& focal, std::uint64_t seed);

// Throws DivergedError on a non-finite loss.
TrainLog train_stage1(const std::vector<LabeledScan>& scans, RpnModel& model, const RpnConfig& rpn,
                      const OptimizerConfig& optimizer, const FocalLossConfig& focal,
                      const EpochCallback& on_epoch = {});

struct CropSample {
  Tensor crop;  // (1,1,S,S,S)
  int label = 0;
};

// Throws ConfigError unless both classes are present (when epochs > 0).
TrainLog train_stage2(const std::vector<CropSample>& samples, FprModel& model, const OptimizerConfig& optimizer,
                      const FocalLossConfig& focal, const EpochCallback& on_epoch = {});

}  // namespace pnd
