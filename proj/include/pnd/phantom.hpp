#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pnd/records.hpp"
#include "pnd/volume.hpp"

namespace pnd {

// Synthetic chest-CT stand-in. Intensities are already on the normalized
// [0, 1]-ish scale the networks consume.
struct PhantomConfig {
  Index3 dims{96, 96, 96};
  Vec3 spacing{0.7, 0.7, 0.7};
  Vec3 origin{0.0, 0.0, 0.0};
  int nodule_count = 1;
  double diameter_lo_mm = 6.0;
  double diameter_hi_mm = 20.0;
  double contrast = 0.5;
  double noise_sigma = 0.05;
  double background_mean = 0.15;
  std::uint64_t seed = 42;

  // Throws ConfigError when a field is out of range.
  void validate() const;
};

struct Phantom {
  Volume volume;
  std::vector<Annotation> annotations;
};

// Gaussian background noise plus one spherical Gaussian blob per nodule (peak
// `contrast` above background, FWHM equal to the diameter). Centers are
// uniform subject to a one-radius border margin and pairwise distance at
// least the sum of radii; placement gives up after 1000 rejected draws with a
// GenerationError. Deterministic in the config.
Phantom generate_phantom(const PhantomConfig& config, const std::string& scan_id);

}  // namespace pnd
