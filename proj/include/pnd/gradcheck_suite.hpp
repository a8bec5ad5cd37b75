#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pnd {

inline constexpr double kGradcheckTolerance = 1e-3;

struct ComponentCheck {
  std::string component;
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t entries_checked = 0;

  bool passed() const { return max_rel_error <= kGradcheckTolerance; }
};

// conv3d, maxpool3d, relu, linear, sigmoid, softmax, residual_block,
// focal_loss, smooth_l1, rpn_head, dual_path, dual_path_focal.
std::vector<std::string> gradcheck_components();

// Central-difference check of every component on small double-precision
// instances. `corrupt` names one component whose backward is deliberately
// scaled by 1.1 (a negative control); an unknown name raises ConfigError.
std::vector<ComponentCheck> run_gradcheck_suite(std::uint64_t seed, const std::string& corrupt = "");

}  // namespace pnd
