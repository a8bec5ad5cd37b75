#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace pnd {

// (z, y, x) triple. Used for voxel positions, sizes and world millimetres.
using Vec3 = std::array<double, 3>;

// Axis-aligned box in voxel units: center and edge lengths, (z, y, x).
struct BBox3D {
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 size{1.0, 1.0, 1.0};

  Vec3 lo() const { return {center[0] - size[0] / 2, center[1] - size[1] / 2, center[2] - size[2] / 2}; }
  Vec3 hi() const { return {center[0] + size[0] / 2, center[1] + size[1] / 2, center[2] + size[2] / 2}; }
  double volume() const { return size[0] * size[1] * size[2]; }
  bool valid() const { return size[0] > 0 && size[1] > 0 && size[2] > 0; }
};

BBox3D box_from_corners(const Vec3& lo, const Vec3& hi);

// Intersection volume over union volume, in [0, 1].
double iou_3d(const BBox3D& a, const BBox3D& b);

// (dz, dy, dx, log dd, log dh, log dw)
using BoxDeltas = std::array<double, 6>;

BoxDeltas encode_box(const BBox3D& gt, const BBox3D& anchor);
// Inverse of encode_box. Log-size deltas are clamped to keep exp() finite.
BBox3D decode_box(const BBox3D& anchor, const BoxDeltas& deltas);
// Clips corners to [0, bounds] per axis; keeps a minimal positive extent.
BBox3D clip_box(const BBox3D& box, const Vec3& bounds);

struct Proposal {
  BBox3D box;
  double objectness = 0.0;
};

// Greedy NMS: visit in descending score (ties by input order), keep a box
// unless its IoU with an already kept box exceeds `iou_threshold`; stop after
// `max_keep` boxes. Returns the kept indices in selection order.
std::vector<std::size_t> nms_3d_indices(const std::vector<Proposal>& proposals,
                                        double iou_threshold, std::size_t max_keep);

std::vector<Proposal> nms_3d(const std::vector<Proposal>& proposals, double iou_threshold,
                             std::size_t max_keep);

}  // namespace pnd
