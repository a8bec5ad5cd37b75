#include "pnd/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "pnd/error.hpp"
#include "pnd/rng.hpp"

namespace pnd {

namespace {

constexpr int kMaxPlacementAttempts = 1000;
// FWHM = 2 sqrt(2 ln 2) sigma
const double kFwhmPerSigma = 2.0 * std::sqrt(2.0 * std::log(2.0));

}  // namespace

void PhantomConfig::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw ConfigError("phantom dims must be >= 1");
    if (!(spacing[a] > 0.0)) throw ConfigError("phantom spacing must be positive");
  }
  if (nodule_count < 0) throw ConfigError("phantom nodule_count must be >= 0");
  if (!(diameter_lo_mm >= 3.0 && diameter_hi_mm <= 30.0 && diameter_lo_mm <= diameter_hi_mm)) {
    throw ConfigError("phantom diameter range must satisfy 3 <= lo <= hi <= 30 mm");
  }
  if (!(contrast > 0.0)) throw ConfigError("phantom contrast must be positive");
  if (!(noise_sigma >= 0.0)) throw ConfigError("phantom noise_sigma must be >= 0");
}

Phantom generate_phantom(const PhantomConfig& config, const std::string& scan_id) {
  config.validate();
  Phantom ph;
  ph.volume = Volume(config.dims, config.spacing, config.origin);
  Volume& vol = ph.volume;

  // Placement first, noise second, each from its own stream.
  Rng place(derive_seed(config.seed, "placement"));
  struct Blob {
    Vec3 center_vox;
    double diameter_mm;
  };
  std::vector<Blob> blobs;
  int attempts = 0;
  while (static_cast<int>(blobs.size()) < config.nodule_count) {
    if (attempts++ >= kMaxPlacementAttempts) {
      throw GenerationError("could not place " + std::to_string(config.nodule_count) +
                            " non-overlapping nodules in " + std::to_string(kMaxPlacementAttempts) +
                            " attempts");
    }
    const double d = place.uniform(config.diameter_lo_mm, config.diameter_hi_mm);
    const double r = d / 2.0;
    Vec3 c{};
    bool fits = true;
    for (int a = 0; a < 3; ++a) {
      const double margin = r / config.spacing[a];
      const double lo = margin, hi = (config.dims[a] - 1) - margin;
      if (hi < lo) {
        fits = false;
        c[a] = 0.0;
        continue;
      }
      c[a] = place.uniform(lo, hi);
    }
    if (!fits) continue;
    for (const Blob& b : blobs) {
      double dist2 = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double dm = (c[a] - b.center_vox[a]) * config.spacing[a];
        dist2 += dm * dm;
      }
      if (std::sqrt(dist2) < r + b.diameter_mm / 2.0) {
        fits = false;
        break;
      }
    }
    if (fits) blobs.push_back({c, d});
  }

  Rng noise(derive_seed(config.seed, "noise"));
  for (auto& v : vol.data) {
    v = static_cast<float>(config.background_mean + config.noise_sigma * noise.normal());
  }

  for (const Blob& b : blobs) {
    const double sigma_mm = b.diameter_mm / kFwhmPerSigma;
    const double reach_mm = 4.0 * sigma_mm;
    Index3 lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max(0, static_cast<int>(std::floor(b.center_vox[a] - reach_mm / config.spacing[a])));
      hi[a] = std::min(config.dims[a] - 1,
                       static_cast<int>(std::ceil(b.center_vox[a] + reach_mm / config.spacing[a])));
    }
    const double inv_two_var = 1.0 / (2.0 * sigma_mm * sigma_mm);
    for (int z = lo[0]; z <= hi[0]; ++z) {
      const double dz = (z - b.center_vox[0]) * config.spacing[0];
      for (int y = lo[1]; y <= hi[1]; ++y) {
        const double dy = (y - b.center_vox[1]) * config.spacing[1];
        for (int x = lo[2]; x <= hi[2]; ++x) {
          const double dx = (x - b.center_vox[2]) * config.spacing[2];
          const double r2 = dz * dz + dy * dy + dx * dx;
          if (r2 > reach_mm * reach_mm) continue;
          vol.at(z, y, x) += static_cast<float>(config.contrast * std::exp(-r2 * inv_two_var));
        }
      }
    }
    ph.annotations.push_back({scan_id, voxel_to_world(vol, b.center_vox), b.diameter_mm});
  }
  return ph;
}

}  // namespace pnd
