#pragma once

#include <functional>
#include <string>
#include <utility>

#include "pnd/layers.hpp"

namespace pnd {

struct GradCheckResult {
  double max_rel_error = 0.0;
  // Where the worst entry lives: "input[i]" or "<param name>[i]".
  std::string worst_entry;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// Compares the analytic gradient of L = sum(layer(input)) against central
// differences (L(x+eps) - L(x-eps)) / 2eps for every input entry and every
// parameter entry. Throws NumericError when a forward produces a non-finite
// value. A non-zero `max_entries_per_tensor` probes an evenly strided subset
// of each tensor instead of every entry.
template <typename T>
GradCheckResult gradient_check(Differentiable<T>& layer, const BasicTensor<T>& input,
                               double epsilon = 1e-3, std::size_t max_entries_per_tensor = 0);

// Same comparison for a scalar function returning (value, derivative).
GradCheckResult scalar_gradient_check(const std::function<std::pair<double, double>(double)>& f,
                                      double x, double epsilon = 1e-3);

}  // namespace pnd
