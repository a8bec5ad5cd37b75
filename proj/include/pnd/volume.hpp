#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "pnd/boxes.hpp"
#include "pnd/tensor.hpp"

namespace pnd {

using Index3 = std::array<int, 3>;

// Scalar 3-D grid, (z, y, x)-major. Spacing and origin are in millimetres.
struct Volume {
  Index3 dims{0, 0, 0};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  std::vector<float> data;

  Volume() = default;
  Volume(Index3 dims, Vec3 spacing, Vec3 origin, float fill = 0.0f);

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[2] + x;
  }
  float& at(int z, int y, int x) { return data[index(z, y, x)]; }
  float at(int z, int y, int x) const { return data[index(z, y, x)]; }
  bool contains(int z, int y, int x) const {
    return z >= 0 && y >= 0 && x >= 0 && z < dims[0] && y < dims[1] && x < dims[2];
  }

  // Throws InputError on non-positive spacing, size mismatch or non-finite data.
  void validate() const;
};

// voxel = (world - origin) / spacing, per axis.
Vec3 world_to_voxel(const Volume& volume, const Vec3& world);
// world = voxel * spacing + origin, per axis.
Vec3 voxel_to_world(const Volume& volume, const Vec3& voxel);

// True when the continuous voxel position lies within [-0.5, dim - 0.5] on
// every axis, i.e. inside the physical footprint of the grid.
bool inside_physical_bounds(const Volume& volume, const Vec3& world);

struct HuWindow {
  double lo = -1000.0;
  double hi = 400.0;
};

// Clamp to [lo, hi] and map linearly onto [0, 1].
Volume normalize_hu(const Volume& volume, const HuWindow& window = {});

// Copies a size^3 block starting at `offset` (may be negative or run past the
// end) into a (1,1,size,size,size) tensor; voxels outside the volume take `fill`.
Tensor extract_patch(const Volume& volume, const Index3& offset, int size, float fill = 0.0f);

struct Patch {
  Tensor tensor;  // (1, 1, size, size, size)
  Index3 offset;  // voxel index of tensor element (0,0,0)
};

// Start offsets along one axis: stride = patch - overlap, last tile flush with
// the end; a single tile at 0 when the axis is not longer than the patch.
std::vector<int> tile_axis_offsets(int length, int patch_size, int overlap);

std::vector<Index3> tile_offsets(const Index3& dims, int patch_size, int overlap);

std::vector<Patch> tile_patches(const Volume& volume, int patch_size, int overlap);

}  // namespace pnd
