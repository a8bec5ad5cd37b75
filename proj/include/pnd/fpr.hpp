#pragma once

#include <cstdint>
#include <vector>

#include "pnd/layers.hpp"
#include "pnd/records.hpp"
#include "pnd/volume.hpp"

namespace pnd {

struct FprConfig {
  int path_channels_a = 8;   // first width of both paths
  int path_channels_b = 16;  // width after the pool
  int crop_size = 32;
  double threshold = 0.5;
  // Training-only knobs.
  int max_negatives_per_scan = 24;
  int positive_jitter = 2;  // voxels, per axis, for annotation-centred crops

  void validate() const;
};

// Two parallel feature paths over a (N,1,S,S,S) crop, each halving S once:
//   a: conv 1->c1, relu, residual(c1), pool, conv c1->c2, relu, residual(c2)
//   b: conv 1->c1, relu, conv c1->c1, relu, pool, conv c1->c2, relu, conv c2->c2, relu
// The outputs are concatenated on channels, globally averaged and fed to a
// linear layer producing one logit per sample: (N, 1).
template <typename T>
class DualPathNet : public Differentiable<T> {
 public:
  DualPathNet(int c1, int c2);
  explicit DualPathNet(const FprConfig& config)
      : DualPathNet(config.path_channels_a, config.path_channels_b) {}

  BasicTensor<T> forward(const BasicTensor<T>& input) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_output) override;
  void collect_parameters(const std::string& prefix, NamedParams<T>& out) override;
  std::string name() const override { return "dual_path"; }

  void init(std::uint64_t seed);
  int c1() const { return c1_; }
  int c2() const { return c2_; }

 private:
  int c1_;
  int c2_;
  Sequential<T> path_a_;
  Sequential<T> path_b_;
  GlobalAvgPool<T> gap_;
  Linear<T> classifier_;
  std::vector<Conv3d<T>*> convs_;
  std::vector<ResidualBlock<T>*> blocks_;
};

using FprModel = DualPathNet<float>;

// size^3 crop centred on the nearest voxel to `center_world`; outside voxels
// are 0. Throws InputError when the center lies outside the volume.
Tensor extract_candidate_patch(const Volume& volume, const Vec3& center_world, int size = 32);

// sigmoid(logit) for a single (1,1,S,S,S) crop.
double fpr_forward(const Tensor& patch, FprModel& model);

// Rescores every candidate, drops those below `threshold` and returns the rest
// sorted by descending probability (ties keep input order).
std::vector<Candidate> reject_false_positives(const std::vector<Candidate>& candidates,
                                              const Volume& volume, FprModel& model,
                                              double threshold, int crop_size = 32);

}  // namespace pnd
