#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pnd/error.hpp"

namespace pnd {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);
// Throws ShapeError when a dim is < 1 or the shape is empty.
void validate_shape(const Shape& shape);

// Dense row-major n-d array. 5-D tensors use (N, C, D, H, W) ordering.
// The optional gradient buffer has the same length as the data.
//
// The element type is a template parameter so that the gradient-check harness
// can re-run whole networks in double precision; everything else in the
// project uses the float instantiation (`Tensor`).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 5-D element access, (n, c, d, h, w).
  T& at(int n, int c, int d, int h, int w) { return data_[offset(n, c, d, h, w)]; }
  const T& at(int n, int c, int d, int h, int w) const {
    return data_[offset(n, c, d, h, w)];
  }

  bool has_grad() const { return grad_.has_value(); }
  // Allocates a zeroed gradient buffer if none exists.
  void enable_grad();
  void zero_grad();
  void drop_grad() { grad_.reset(); }
  std::span<T> grad();
  std::span<const T> grad() const;

  // Same data, new shape of equal element count.
  BasicTensor reshaped(Shape shape) const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    BasicTensor<U> t(shape_, std::move(out));
    if (grad_) {
      t.enable_grad();
      auto g = t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<U>((*grad_)[i]);
    }
    return t;
  }

  bool same_shape(const BasicTensor& other) const { return shape_ == other.shape_; }

 private:
  std::size_t offset(int n, int c, int d, int h, int w) const {
    return ((((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + d) * shape_[3] + h) *
                shape_[4]) +
           w;
  }

  Shape shape_;
  std::vector<T> data_;
  std::optional<std::vector<T>> grad_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

// All entries equal to `fill`, no gradient buffer.
Tensor tensor_new(const Shape& shape, float fill);

// Entries uniform in (-scale, +scale) from xoshiro256** seeded with `seed`.
// Identical arguments give bit-identical output.
Tensor tensor_rand(const Shape& shape, std::uint64_t seed, float scale);

// True when every value is finite.
template <typename T>
bool all_finite(std::span<const T> values);

}  // namespace pnd
