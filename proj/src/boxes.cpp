#include "pnd/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pnd/error.hpp"

namespace pnd {

namespace {

// exp(4.135) ~ 62.5x growth per axis is already far beyond any useful box.
constexpr double kMaxLogScale = 4.135;
constexpr double kMinExtent = 1e-3;

}  // namespace

BBox3D box_from_corners(const Vec3& lo, const Vec3& hi) {
  BBox3D b;
  for (int a = 0; a < 3; ++a) {
    b.center[a] = 0.5 * (lo[a] + hi[a]);
    b.size[a] = hi[a] - lo[a];
  }
  return b;
}

double iou_3d(const BBox3D& a, const BBox3D& b) {
  const Vec3 alo = a.lo(), ahi = a.hi(), blo = b.lo(), bhi = b.hi();
  double inter = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double overlap = std::min(ahi[k], bhi[k]) - std::max(alo[k], blo[k]);
    if (overlap <= 0.0) return 0.0;
    inter *= overlap;
  }
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

BoxDeltas encode_box(const BBox3D& gt, const BBox3D& anchor) {
  BoxDeltas d{};
  for (int a = 0; a < 3; ++a) {
    d[a] = (gt.center[a] - anchor.center[a]) / anchor.size[a];
    d[a + 3] = std::log(gt.size[a] / anchor.size[a]);
  }
  return d;
}

BBox3D decode_box(const BBox3D& anchor, const BoxDeltas& deltas) {
  BBox3D b;
  for (int a = 0; a < 3; ++a) {
    b.center[a] = anchor.center[a] + deltas[a] * anchor.size[a];
    b.size[a] = anchor.size[a] * std::exp(std::min(deltas[a + 3], kMaxLogScale));
  }
  return b;
}

BBox3D clip_box(const BBox3D& box, const Vec3& bounds) {
  Vec3 lo = box.lo(), hi = box.hi();
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::clamp(lo[a], 0.0, bounds[a]);
    hi[a] = std::clamp(hi[a], 0.0, bounds[a]);
    if (hi[a] - lo[a] < kMinExtent) {
      // Degenerate after clipping: collapse to a sliver at the clamped center.
      const double c = std::clamp(box.center[a], kMinExtent / 2, bounds[a] - kMinExtent / 2);
      lo[a] = c - kMinExtent / 2;
      hi[a] = c + kMinExtent / 2;
    }
  }
  return box_from_corners(lo, hi);
}

std::vector<std::size_t> nms_3d_indices(const std::vector<Proposal>& proposals,
                                        double iou_threshold, std::size_t max_keep) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw ConfigError("nms_3d: iou threshold must be in (0, 1]");
  }
  std::vector<std::size_t> order(proposals.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return proposals[a].objectness > proposals[b].objectness;
  });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    if (kept.size() >= max_keep) break;
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (iou_3d(proposals[idx].box, proposals[k].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

std::vector<Proposal> nms_3d(const std::vector<Proposal>& proposals, double iou_threshold,
                             std::size_t max_keep) {
  std::vector<Proposal> out;
  for (std::size_t i : nms_3d_indices(proposals, iou_threshold, max_keep)) {
    out.push_back(proposals[i]);
  }
  return out;
}

}  // namespace pnd
