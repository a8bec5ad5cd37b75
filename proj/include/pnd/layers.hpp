#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pnd/tensor.hpp"

namespace pnd {

// ---------------------------------------------------------------------------
// Stateless kernels. Each forward has an explicit backward; nothing is taped.
// ---------------------------------------------------------------------------

template <typename T>
struct Conv3dParams {
  BasicTensor<T> weights;  // (C_out, C_in, k, k, k)
  BasicTensor<T> bias;     // (C_out)
  int stride = 1;
  int padding = 0;

  int out_channels() const { return weights.dim(0); }
  int in_channels() const { return weights.dim(1); }
  int kernel() const { return weights.dim(2); }
  void validate() const;
};

template <typename T>
struct Conv3dGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

// Output spatial extent of a window op: floor((size + 2*pad - k) / stride) + 1.
int window_output_size(int size, int kernel, int stride, int padding);

template <typename T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& input, const Conv3dParams<T>& params);

template <typename T>
Conv3dGrads<T> conv3d_backward(const BasicTensor<T>& input, const Conv3dParams<T>& params,
                               const BasicTensor<T>& grad_out);

template <typename T>
struct MaxPoolResult {
  BasicTensor<T> output;
  // Flat input index of the selected element for every output element.
  std::vector<std::size_t> argmax;
};

// Ties resolve to the lowest flat input index.
template <typename T>
MaxPoolResult<T> maxpool3d(const BasicTensor<T>& input, int window, int stride);

template <typename T>
BasicTensor<T> maxpool3d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                                  const BasicTensor<T>& grad_out);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out);

template <typename T>
T sigmoid_scalar(T x);
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input);
// Takes the forward *output*.
template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& output, const BasicTensor<T>& grad_out);

// (N, F) x (F, G) + (G) -> (N, G)
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                      const BasicTensor<T>& bias);

template <typename T>
struct LinearGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                               const BasicTensor<T>& grad_out);

// Row-wise softmax over (N, K) with max subtraction.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& input);
// Takes the forward *output*.
template <typename T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& output, const BasicTensor<T>& grad_out);

// (N, C, D, H, W) -> (N, C)
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> global_avg_pool_backward(const Shape& input_shape, const BasicTensor<T>& grad_out);

// Concatenate two 5-D tensors along the channel axis.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>& t, int first_channels);

// relu(conv2(relu(conv1(x))) + x). Both convs must preserve shape.
template <typename T>
BasicTensor<T> residual_block_forward(const BasicTensor<T>& input, const Conv3dParams<T>& conv1,
                                      const Conv3dParams<T>& conv2);

template <typename T>
struct ResidualGrads {
  BasicTensor<T> input;
  Conv3dGrads<T> conv1;
  Conv3dGrads<T> conv2;
};

template <typename T>
ResidualGrads<T> residual_block_backward(const BasicTensor<T>& input, const Conv3dParams<T>& conv1,
                                         const Conv3dParams<T>& conv2,
                                         const BasicTensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Stateful modules used to compose networks. forward() caches what backward()
// needs; backward() accumulates parameter gradients into each parameter's
// gradient buffer and returns the gradient w.r.t. the module input.
// ---------------------------------------------------------------------------

template <typename T>
using NamedParams = std::vector<std::pair<std::string, BasicTensor<T>*>>;

template <typename T>
class Differentiable {
 public:
  virtual ~Differentiable() = default;
  virtual BasicTensor<T> forward(const BasicTensor<T>& input) = 0;
  virtual BasicTensor<T> backward(const BasicTensor<T>& grad_output) = 0;
  virtual void collect_parameters(const std::string& /*prefix*/, NamedParams<T>& /*out*/) {}
  virtual std::string name() const = 0;

  NamedParams<T> parameters() {
    NamedParams<T> out;
    collect_parameters("", out);
    return out;
  }
  void zero_grad();
};

template <typename T>
class Conv3d : public Differentiable<T> {
 public:
  Conv3d(int in_channels, int out_channels, int kernel, int stride, int padding);
  explicit Conv3d(Conv3dParams<T> params);

  BasicTensor<T> forward(const BasicTensor<T>& input) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_output) override;
  void collect_parameters(const std::string& prefix, NamedParams<T>& out) override;
  std::string name() const override { return "conv3d"; }

  // He-uniform weights, zero bias.
  void init(std::uint64_t seed);

  Conv3dParams<T>& params() { return params_; }
  const Conv3dParams<T>& params() const { return params_; }

 private:
  Conv3dParams<T> params_;
  BasicTensor<T> cached_input_;
};

template <typename T>
class ReLU : public Differentiable<T> {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& input) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_output) override;
  std::string name() const override { return "relu"; }

 private:
  BasicTensor<T> cached_input_;
};

template <typename T>
class Sigmoid : public Differentiable<T> {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& input) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_output) override;
  std::string name() const override { return "sigmoid"; }

 private:
  BasicTensor<T> cached_output_;
};

template <typename T>
class Softmax : public Differentiable<T> {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& input) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_output) override;
  std::string name() const override { return "softmax"; }

 private:
  BasicTensor<T> cached_output_;
};

template <typename T>
class MaxPool3d : public Differentiable<T> {
 public:
  MaxPool3d(int window, int stride) : window_(window), stride_(stride) {}
  BasicTensor<T> forward(const BasicTensor<T>& input) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_output) override;
  std::string name() const override { return "maxpool3d"; }

 private:
  int window_;
  int stride_;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class Linear : public Differentiable<T> {
 public:
  Linear(int in_features, int out_features);
  BasicTensor<T> forward(const BasicTensor<T>& input) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_output) override;
  void collect_parameters(const std::string& prefix, NamedParams<T>& out) override;
  std::string name() const override { return "linear"; }

  void init(std::uint64_t seed);
  BasicTensor<T>& weights() { return weights_; }
  BasicTensor<T>& bias() { return bias_; }

 private:
  BasicTensor<T> weights_;  // (F, G)
  BasicTensor<T> bias_;     // (G)
  BasicTensor<T> cached_input_;
};

template <typename T>
class GlobalAvgPool : public Differentiable<T> {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& input) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_output) override;
  std::string name() const override { return "global_avg_pool"; }

 private:
  Shape input_shape_;
};

template <typename T>
class ResidualBlock : public Differentiable<T> {
 public:
  explicit ResidualBlock(int channels);
  BasicTensor<T> forward(const BasicTensor<T>& input) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_output) override;
  void collect_parameters(const std::string& prefix, NamedParams<T>& out) override;
  std::string name() const override { return "residual_block"; }

  void init(std::uint64_t seed);
  Conv3d<T>& conv1() { return conv1_; }
  Conv3d<T>& conv2() { return conv2_; }

 private:
  Conv3d<T> conv1_;
  Conv3d<T> conv2_;
  BasicTensor<T> cached_input_;
  BasicTensor<T> cached_hidden_pre_;  // conv1 output before relu
  BasicTensor<T> cached_sum_;         // conv2 output + skip, before relu
};

template <typename T>
class Sequential : public Differentiable<T> {
 public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename Layer, typename... Args>
  Layer& add(Args&&... args) {
    auto layer = std::make_unique<Layer>(std::forward<Args>(args)...);
    Layer& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  BasicTensor<T> forward(const BasicTensor<T>& input) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_output) override;
  void collect_parameters(const std::string& prefix, NamedParams<T>& out) override;
  std::string name() const override { return "sequential"; }

  std::size_t size() const { return layers_.size(); }
  Differentiable<T>& layer(std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Differentiable<T>>> layers_;
};

// Copies parameter values between two structurally identical networks,
// converting element type as needed.
template <typename Src, typename Dst>
void copy_parameters(const NamedParams<Src>& src, const NamedParams<Dst>& dst);

}  // namespace pnd
