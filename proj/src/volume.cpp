#include "pnd/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pnd/error.hpp"

namespace pnd {

Volume::Volume(Index3 dims_, Vec3 spacing_, Vec3 origin_, float fill)
    : dims(dims_), spacing(spacing_), origin(origin_) {
  for (int d : dims) {
    if (d < 1) throw InputError("volume dims must be >= 1");
  }
  data.assign(voxel_count(), fill);
}

void Volume::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw InputError("volume dims must be >= 1");
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
      throw InputError("volume spacing must be positive and finite");
    }
    if (!std::isfinite(origin[a])) throw InputError("volume origin must be finite");
  }
  if (data.size() != voxel_count()) {
    throw InputError("volume data length " + std::to_string(data.size()) +
                     " does not match dims");
  }
  if (!all_finite<float>(data)) throw InputError("volume contains non-finite intensities");
}

namespace {

void require_finite(const Vec3& v) {
  for (double c : v) {
    if (!std::isfinite(c)) throw InputError("non-finite coordinate");
  }
}

}  // namespace

Vec3 world_to_voxel(const Volume& volume, const Vec3& world) {
  require_finite(world);
  Vec3 v{};
  for (int a = 0; a < 3; ++a) v[a] = (world[a] - volume.origin[a]) / volume.spacing[a];
  return v;
}

Vec3 voxel_to_world(const Volume& volume, const Vec3& voxel) {
  require_finite(voxel);
  Vec3 w{};
  for (int a = 0; a < 3; ++a) w[a] = voxel[a] * volume.spacing[a] + volume.origin[a];
  return w;
}

bool inside_physical_bounds(const Volume& volume, const Vec3& world) {
  const Vec3 v = world_to_voxel(volume, world);
  for (int a = 0; a < 3; ++a) {
    if (v[a] < -0.5 || v[a] > volume.dims[a] - 0.5) return false;
  }
  return true;
}

Volume normalize_hu(const Volume& volume, const HuWindow& window) {
  if (!(window.lo < window.hi)) throw ConfigError("HU window requires lo < hi");
  Volume out = volume;
  const double range = window.hi - window.lo;
  for (auto& v : out.data) {
    const double c = std::clamp(static_cast<double>(v), window.lo, window.hi);
    v = static_cast<float>((c - window.lo) / range);
  }
  return out;
}

Tensor extract_patch(const Volume& volume, const Index3& offset, int size, float fill) {
  Tensor t(Shape{1, 1, size, size, size}, fill);
  const int z0 = std::max(0, -offset[0]), z1 = std::min(size, volume.dims[0] - offset[0]);
  const int y0 = std::max(0, -offset[1]), y1 = std::min(size, volume.dims[1] - offset[1]);
  const int x0 = std::max(0, -offset[2]), x1 = std::min(size, volume.dims[2] - offset[2]);
  if (x1 <= x0) return t;
  for (int z = z0; z < z1; ++z) {
    for (int y = y0; y < y1; ++y) {
      const float* src = volume.data.data() + volume.index(z + offset[0], y + offset[1], x0 + offset[2]);
      float* dst = &t.at(0, 0, z, y, x0);
      std::copy(src, src + (x1 - x0), dst);
    }
  }
  return t;
}

std::vector<int> tile_axis_offsets(int length, int patch_size, int overlap) {
  if (patch_size < 1) throw ConfigError("patch size must be >= 1");
  if (overlap < 0 || overlap >= patch_size) {
    throw ConfigError("tile overlap must be in [0, patch_size)");
  }
  const int stride = patch_size - overlap;
  std::vector<int> offsets;
  int o = 0;
  while (true) {
    if (o + patch_size >= length) {
      offsets.push_back(std::max(0, length - patch_size));
      break;
    }
    offsets.push_back(o);
    o += stride;
  }
  return offsets;
}

std::vector<Index3> tile_offsets(const Index3& dims, int patch_size, int overlap) {
  const auto oz = tile_axis_offsets(dims[0], patch_size, overlap);
  const auto oy = tile_axis_offsets(dims[1], patch_size, overlap);
  const auto ox = tile_axis_offsets(dims[2], patch_size, overlap);
  std::vector<Index3> out;
  out.reserve(oz.size() * oy.size() * ox.size());
  for (int z : oz) {
    for (int y : oy) {
      for (int x : ox) out.push_back({z, y, x});
    }
  }
  return out;
}

std::vector<Patch> tile_patches(const Volume& volume, int patch_size, int overlap) {
  std::vector<Patch> patches;
  for (const Index3& off : tile_offsets(volume.dims, patch_size, overlap)) {
    patches.push_back({extract_patch(volume, off, patch_size), off});
  }
  return patches;
}

}  // namespace pnd
