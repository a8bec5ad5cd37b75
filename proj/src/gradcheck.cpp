#include "pnd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pnd {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

template <typename T>
double summed_output(Differentiable<T>& layer, const BasicTensor<T>& input) {
  const BasicTensor<T> out = layer.forward(input);
  double sum = 0.0;
  for (T v : out.data()) {
    if (!std::isfinite(v)) throw NumericError("gradient_check: non-finite forward output");
    sum += static_cast<double>(v);
  }
  return sum;
}

void record(GradCheckResult& r, double a, double n, const std::string& where) {
  const double e = relative_error(a, n);
  ++r.entries_checked;
  if (e > r.max_rel_error || r.worst_entry.empty()) {
    r.max_rel_error = e;
    r.worst_entry = where;
    r.analytic = a;
    r.numeric = n;
  }
}

std::size_t entry_stride(std::size_t n, std::size_t max_entries) {
  if (max_entries == 0 || n <= max_entries) return 1;
  return (n + max_entries - 1) / max_entries;
}

}  // namespace

template <typename T>
GradCheckResult gradient_check(Differentiable<T>& layer, const BasicTensor<T>& input,
                               double epsilon, std::size_t max_entries_per_tensor) {
  if (!(epsilon > 0.0)) throw ConfigError("gradient_check: epsilon must be positive");
  GradCheckResult result;

  auto params = layer.parameters();
  for (auto& [name, p] : params) {
    p->enable_grad();
    p->zero_grad();
  }
  const BasicTensor<T> out = layer.forward(input);
  if (!all_finite<T>(out.data())) throw NumericError("gradient_check: non-finite forward output");
  const BasicTensor<T> grad_input = layer.backward(BasicTensor<T>(out.shape(), T{1}));

  // Snapshot analytic parameter gradients before the probing forwards.
  std::vector<std::vector<T>> param_grads;
  for (auto& [name, p] : params) {
    auto g = p->grad();
    param_grads.emplace_back(g.begin(), g.end());
  }

  const T eps = static_cast<T>(epsilon);
  BasicTensor<T> probe = input;
  probe.drop_grad();
  for (std::size_t i = 0; i < probe.size(); i += entry_stride(probe.size(), max_entries_per_tensor)) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const double plus = summed_output(layer, probe);
    probe[i] = orig - eps;
    const double minus = summed_output(layer, probe);
    probe[i] = orig;
    // Divide by the perturbation actually realised in T.
    const double h = static_cast<double>(orig + eps) - static_cast<double>(orig - eps);
    record(result, grad_input[i], (plus - minus) / h, "input[" + std::to_string(i) + "]");
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& [name, p] = params[k];
    for (std::size_t i = 0; i < p->size(); i += entry_stride(p->size(), max_entries_per_tensor)) {
      const T orig = (*p)[i];
      (*p)[i] = orig + eps;
      const double plus = summed_output(layer, input);
      (*p)[i] = orig - eps;
      const double minus = summed_output(layer, input);
      (*p)[i] = orig;
      const double h = static_cast<double>(orig + eps) - static_cast<double>(orig - eps);
      record(result, param_grads[k][i], (plus - minus) / h, name + "[" + std::to_string(i) + "]");
    }
  }
  return result;
}

GradCheckResult scalar_gradient_check(const std::function<std::pair<double, double>(double)>& f,
                                      double x, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("gradient_check: epsilon must be positive");
  GradCheckResult result;
  const auto [value, analytic] = f(x);
  const double plus = f(x + epsilon).first;
  const double minus = f(x - epsilon).first;
  if (!std::isfinite(value) || !std::isfinite(plus) || !std::isfinite(minus)) {
    throw NumericError("gradient_check: non-finite function value");
  }
  record(result, analytic, (plus - minus) / (2.0 * epsilon), "x");
  return result;
}

template GradCheckResult gradient_check(Differentiable<float>&, const BasicTensor<float>&, double,
                                        std::size_t);
template GradCheckResult gradient_check(Differentiable<double>&, const BasicTensor<double>&,
                                        double, std::size_t);

}  // namespace pnd
