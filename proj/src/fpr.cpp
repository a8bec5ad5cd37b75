#include "pnd/fpr.hpp"

#include <algorithm>
#include <cmath>

#include "pnd/error.hpp"
#include "pnd/rng.hpp"

namespace pnd {

void FprConfig::validate() const {
  if (path_channels_a < 1 || path_channels_b < 1) throw ConfigError("stage-2 channels must be >= 1");
  if (crop_size < 4 || crop_size % 2 != 0) throw ConfigError("crop_size must be even and >= 4");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must be in [0, 1]");
  if (max_negatives_per_scan < 1) throw ConfigError("max_negatives_per_scan must be >= 1");
  if (positive_jitter < 0) throw ConfigError("positive_jitter must be >= 0");
}

template <typename T>
DualPathNet<T>::DualPathNet(int c1, int c2) : c1_(c1), c2_(c2), classifier_(2 * c2, 1) {
  if (c1 < 1 || c2 < 1) throw ConfigError("dual path channels must be >= 1");
  convs_.push_back(&path_a_.template add<Conv3d<T>>(1, c1, 3, 1, 1));
  path_a_.template add<ReLU<T>>();
  blocks_.push_back(&path_a_.template add<ResidualBlock<T>>(c1));
  path_a_.template add<MaxPool3d<T>>(2, 2);
  convs_.push_back(&path_a_.template add<Conv3d<T>>(c1, c2, 3, 1, 1));
  path_a_.template add<ReLU<T>>();
  blocks_.push_back(&path_a_.template add<ResidualBlock<T>>(c2));

  convs_.push_back(&path_b_.template add<Conv3d<T>>(1, c1, 3, 1, 1));
  path_b_.template add<ReLU<T>>();
  convs_.push_back(&path_b_.template add<Conv3d<T>>(c1, c1, 3, 1, 1));
  path_b_.template add<ReLU<T>>();
  path_b_.template add<MaxPool3d<T>>(2, 2);
  convs_.push_back(&path_b_.template add<Conv3d<T>>(c1, c2, 3, 1, 1));
  path_b_.template add<ReLU<T>>();
  convs_.push_back(&path_b_.template add<Conv3d<T>>(c2, c2, 3, 1, 1));
  path_b_.template add<ReLU<T>>();
}

template <typename T>
void DualPathNet<T>::init(std::uint64_t seed) {
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i]->init(derive_seed(seed, "conv" + std::to_string(i)));
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i]->init(derive_seed(seed, "block" + std::to_string(i)));
  classifier_.init(derive_seed(seed, "classifier"));
}

template <typename T>
BasicTensor<T> DualPathNet<T>::forward(const BasicTensor<T>& input) {
  const Shape& s = input.shape();
  if (s.size() != 5 || s[1] != 1 || s[2] != s[3] || s[2] != s[4] || s[2] % 2 != 0) {
    throw ShapeError("dual path expects (N,1,S,S,S) with even S, got " + shape_to_string(s));
  }
  const BasicTensor<T> fused = concat_channels(path_a_.forward(input), path_b_.forward(input));
  return classifier_.forward(gap_.forward(fused));
}

template <typename T>
BasicTensor<T> DualPathNet<T>::backward(const BasicTensor<T>& grad_output) {
  const BasicTensor<T> g_fused = gap_.backward(classifier_.backward(grad_output));
  auto [ga, gb] = split_channels(g_fused, c2_);
  BasicTensor<T> g = path_a_.backward(ga);
  const BasicTensor<T> g2 = path_b_.backward(gb);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += g2[i];
  return g;
}

template <typename T>
void DualPathNet<T>::collect_parameters(const std::string& prefix, NamedParams<T>& out) {
  path_a_.collect_parameters(prefix + "path_a.", out);
  path_b_.collect_parameters(prefix + "path_b.", out);
  classifier_.collect_parameters(prefix + "classifier.", out);
}

template class DualPathNet<float>;
template class DualPathNet<double>;

Tensor extract_candidate_patch(const Volume& volume, const Vec3& center_world, int size) {
  if (size < 1) throw ConfigError("crop size must be >= 1");
  if (!inside_physical_bounds(volume, center_world)) {
    throw InputError("candidate center lies outside the volume");
  }
  const Vec3 v = world_to_voxel(volume, center_world);
  Index3 offset{};
  for (int a = 0; a < 3; ++a) offset[a] = static_cast<int>(std::lround(v[a])) - size / 2;
  return extract_patch(volume, offset, size, 0.0f);
}

double fpr_forward(const Tensor& patch, FprModel& model) {
  const Shape& s = patch.shape();
  if (s.size() != 5 || s[0] != 1) {
    throw ShapeError("fpr_forward expects a single (1,1,S,S,S) crop, got " + shape_to_string(s));
  }
  const Tensor logit = model.forward(patch);
  // Keep the result strictly inside (0, 1) even when the logit saturates.
  const double p = sigmoid_scalar(static_cast<double>(logit[0]));
  return std::clamp(p, std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0));
}

std::vector<Candidate> reject_false_positives(const std::vector<Candidate>& candidates,
                                              const Volume& volume, FprModel& model,
                                              double threshold, int crop_size) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must be in [0, 1]");
  std::vector<Candidate> out;
  for (const Candidate& c : candidates) {
    Candidate r = c;
    r.probability = fpr_forward(extract_candidate_patch(volume, c.center_world, crop_size), model);
    if (r.probability >= threshold) out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Candidate& a, const Candidate& b) { return a.probability > b.probability; });
  return out;
}

}  // namespace pnd
