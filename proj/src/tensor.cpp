#include "pnd/tensor.hpp"

#include <cmath>
#include <sstream>

#include "pnd/rng.hpp"

namespace pnd {

std::size_t shape_numel(const Shape& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d < 0 ? 0 : d);
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("invalid shape: no dimensions");
  for (int d : shape) {
    if (d < 1) throw ShapeError("invalid shape " + shape_to_string(shape) + ": dims must be >= 1");
  }
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

template <typename T>
void BasicTensor<T>::enable_grad() {
  if (!grad_) grad_.emplace(data_.size(), T{0});
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), T{0});
}

template <typename T>
std::span<T> BasicTensor<T>::grad() {
  if (!grad_) throw ShapeError("tensor has no gradient buffer");
  return *grad_;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  if (!grad_) throw ShapeError("tensor has no gradient buffer");
  return *grad_;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  validate_shape(shape);
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return BasicTensor(std::move(shape), data_);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

Tensor tensor_new(const Shape& shape, float fill) { return Tensor(shape, fill); }

Tensor tensor_rand(const Shape& shape, std::uint64_t seed, float scale) {
  Tensor t(shape, 0.0f);
  Rng rng(seed);
  for (auto& v : t.data()) v = rng.symmetric_float(scale);
  return t;
}

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);

}  // namespace pnd
