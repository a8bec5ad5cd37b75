#include "pnd/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pnd/rng.hpp"

namespace pnd {

namespace {

void require_rank(const Shape& shape, int rank, const char* what) {
  if (static_cast<int>(shape.size()) != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(shape));
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a) + " vs " +
                     shape_to_string(b));
  }
}

// Output indices o in [lo, hi] whose input index o*stride + k - pad is in [0, size).
struct Range {
  int lo;
  int hi;  // inclusive; empty when hi < lo
};

Range valid_range(int out_size, int in_size, int k, int stride, int pad) {
  // o*stride + k - pad >= 0  ->  o >= ceil((pad - k) / stride)
  int lo = 0;
  if (pad - k > 0) lo = (pad - k + stride - 1) / stride;
  // o*stride + k - pad <= in_size - 1
  const int num = in_size - 1 + pad - k;
  int hi = num < 0 ? -1 : num / stride;
  hi = std::min(hi, out_size - 1);
  return {lo, hi};
}

}  // namespace

int window_output_size(int size, int kernel, int stride, int padding) {
  return (size + 2 * padding - kernel) / stride + 1;
}

template <typename T>
void Conv3dParams<T>::validate() const {
  require_rank(weights.shape(), 5, "conv3d weights");
  require_rank(bias.shape(), 1, "conv3d bias");
  if (weights.dim(2) != weights.dim(3) || weights.dim(2) != weights.dim(4)) {
    throw ShapeError("conv3d kernel must be cubic, got " + shape_to_string(weights.shape()));
  }
  if (bias.dim(0) != weights.dim(0)) {
    throw ShapeError("conv3d bias length does not match output channels");
  }
  if (stride < 1) throw ShapeError("conv3d stride must be >= 1");
  if (padding < 0) throw ShapeError("conv3d padding must be >= 0");
}

namespace {

template <typename T>
Shape conv_output_shape(const Shape& in, const Conv3dParams<T>& p) {
  require_rank(in, 5, "conv3d input");
  p.validate();
  if (in[1] != p.in_channels()) {
    throw ShapeError("conv3d channel mismatch: input has " + std::to_string(in[1]) +
                     ", weights expect " + std::to_string(p.in_channels()));
  }
  const int k = p.kernel();
  Shape out{in[0], p.out_channels(), 0, 0, 0};
  for (int a = 2; a < 5; ++a) {
    if (in[a] + 2 * p.padding < k) {
      throw ShapeError("conv3d input " + shape_to_string(in) + " smaller than kernel " +
                       std::to_string(k));
    }
    out[a] = window_output_size(in[a], k, p.stride, p.padding);
  }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& input, const Conv3dParams<T>& p) {
  const Shape& in = input.shape();
  const Shape out_shape = conv_output_shape(in, p);
  BasicTensor<T> out(out_shape, T{0});

  const int N = in[0], Ci = in[1], D = in[2], H = in[3], W = in[4];
  const int Co = out_shape[1], Do = out_shape[2], Ho = out_shape[3], Wo = out_shape[4];
  const int k = p.kernel(), s = p.stride, pad = p.padding;
  const std::size_t in_slice = static_cast<std::size_t>(H) * W;
  const std::size_t out_slice = static_cast<std::size_t>(Ho) * Wo;
  const T* x = input.data().data();
  const T* wts = p.weights.data().data();
  T* y = out.data().data();

  std::vector<Range> h_ranges(k), w_ranges(k);
  for (int t = 0; t < k; ++t) {
    h_ranges[t] = valid_range(Ho, H, t, s, pad);
    w_ranges[t] = valid_range(Wo, W, t, s, pad);
  }

  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Co; ++co) {
      T* y_c = y + (static_cast<std::size_t>(n) * Co + co) * Do * out_slice;
      std::fill(y_c, y_c + Do * out_slice, p.bias[co]);
      for (int od = 0; od < Do; ++od) {
        T* y_s = y_c + od * out_slice;
        for (int ci = 0; ci < Ci; ++ci) {
          const T* x_c = x + (static_cast<std::size_t>(n) * Ci + ci) * D * in_slice;
          const T* w_c = wts + ((static_cast<std::size_t>(co) * Ci + ci) * k * k * k);
          for (int kd = 0; kd < k; ++kd) {
            const int id = od * s + kd - pad;
            if (id < 0 || id >= D) continue;
            const T* x_s = x_c + id * in_slice;
            for (int kh = 0; kh < k; ++kh) {
              const Range hr = h_ranges[kh];
              for (int kw = 0; kw < k; ++kw) {
                const T wv = w_c[(kd * k + kh) * k + kw];
                const Range wr = w_ranges[kw];
                if (wr.hi < wr.lo) continue;
                for (int oh = hr.lo; oh <= hr.hi; ++oh) {
                  T* yr = y_s + oh * Wo;
                  const T* xr = x_s + (oh * s + kh - pad) * W;
                  if (s == 1) {
                    const T* xs = xr + kw - pad;
                    for (int ow = wr.lo; ow <= wr.hi; ++ow) yr[ow] += wv * xs[ow];
                  } else {
                    for (int ow = wr.lo; ow <= wr.hi; ++ow) yr[ow] += wv * xr[ow * s + kw - pad];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Conv3dGrads<T> conv3d_backward(const BasicTensor<T>& input, const Conv3dParams<T>& p,
                               const BasicTensor<T>& grad_out) {
  const Shape& in = input.shape();
  const Shape out_shape = conv_output_shape(in, p);
  require_same_shape(grad_out.shape(), out_shape, "conv3d backward grad_out");

  const int N = in[0], Ci = in[1], D = in[2], H = in[3], W = in[4];
  const int Co = out_shape[1], Do = out_shape[2], Ho = out_shape[3], Wo = out_shape[4];
  const int k = p.kernel(), s = p.stride, pad = p.padding;
  const int taps = k * k * k;
  const std::size_t in_slice = static_cast<std::size_t>(H) * W;
  const std::size_t out_slice = static_cast<std::size_t>(Ho) * Wo;

  Conv3dGrads<T> g{BasicTensor<T>(in, T{0}), BasicTensor<T>(p.weights.shape(), T{0}),
                   BasicTensor<T>(p.bias.shape(), T{0})};
  const T* x = input.data().data();
  const T* wts = p.weights.data().data();
  const T* gy = grad_out.data().data();
  T* gx = g.input.data().data();
  T* gw = g.weights.data().data();

  std::vector<Range> h_ranges(k), w_ranges(k);
  for (int t = 0; t < k; ++t) {
    h_ranges[t] = valid_range(Ho, H, t, s, pad);
    w_ranges[t] = valid_range(Wo, W, t, s, pad);
  }

  // Per-(ci, tap, ow) partial sums for the weight gradient of one output
  // channel; reduced once per channel so the inner loops stay vectorizable.
  std::vector<T> partial(static_cast<std::size_t>(Ci) * taps * Wo);

  for (int co = 0; co < Co; ++co) {
    std::fill(partial.begin(), partial.end(), T{0});
    T bias_acc{0};
    for (int n = 0; n < N; ++n) {
      const T* gy_c = gy + (static_cast<std::size_t>(n) * Co + co) * Do * out_slice;
      for (std::size_t i = 0; i < Do * out_slice; ++i) bias_acc += gy_c[i];
      for (int od = 0; od < Do; ++od) {
        const T* gy_s = gy_c + od * out_slice;
        for (int ci = 0; ci < Ci; ++ci) {
          const std::size_t c_off = (static_cast<std::size_t>(n) * Ci + ci) * D * in_slice;
          const T* x_c = x + c_off;
          T* gx_c = gx + c_off;
          const T* w_c = wts + ((static_cast<std::size_t>(co) * Ci + ci) * taps);
          for (int kd = 0; kd < k; ++kd) {
            const int id = od * s + kd - pad;
            if (id < 0 || id >= D) continue;
            const T* x_s = x_c + id * in_slice;
            T* gx_s = gx_c + id * in_slice;
            for (int kh = 0; kh < k; ++kh) {
              const Range hr = h_ranges[kh];
              for (int kw = 0; kw < k; ++kw) {
                const int tap = (kd * k + kh) * k + kw;
                const T wv = w_c[tap];
                const Range wr = w_ranges[kw];
                if (wr.hi < wr.lo) continue;
                T* acc = partial.data() + (static_cast<std::size_t>(ci) * taps + tap) * Wo;
                for (int oh = hr.lo; oh <= hr.hi; ++oh) {
                  const T* gr = gy_s + oh * Wo;
                  const int ih = oh * s + kh - pad;
                  const T* xr = x_s + ih * W;
                  T* gxr = gx_s + ih * W;
                  if (s == 1) {
                    const T* xs = xr + kw - pad;
                    T* gxs = gxr + kw - pad;
                    for (int ow = wr.lo; ow <= wr.hi; ++ow) {
                      gxs[ow] += wv * gr[ow];
                      acc[ow] += gr[ow] * xs[ow];
                    }
                  } else {
                    for (int ow = wr.lo; ow <= wr.hi; ++ow) {
                      const int iw = ow * s + kw - pad;
                      gxr[iw] += wv * gr[ow];
                      acc[ow] += gr[ow] * xr[iw];
                    }
                  }
                }
              }
            }
          }
        }
      }
    }
    g.bias[co] = bias_acc;
    for (int ci = 0; ci < Ci; ++ci) {
      for (int tap = 0; tap < taps; ++tap) {
        const T* acc = partial.data() + (static_cast<std::size_t>(ci) * taps + tap) * Wo;
        T sum{0};
        for (int ow = 0; ow < Wo; ++ow) sum += acc[ow];
        gw[(static_cast<std::size_t>(co) * Ci + ci) * taps + tap] = sum;
      }
    }
  }
  return g;
}

template <typename T>
MaxPoolResult<T> maxpool3d(const BasicTensor<T>& input, int window, int stride) {
  const Shape& in = input.shape();
  require_rank(in, 5, "maxpool3d input");
  if (window < 1 || stride < 1) throw ShapeError("maxpool3d window and stride must be >= 1");
  for (int a = 2; a < 5; ++a) {
    if (in[a] < window) {
      throw ShapeError("maxpool3d input " + shape_to_string(in) + " smaller than window " +
                       std::to_string(window));
    }
  }
  const int N = in[0], C = in[1], D = in[2], H = in[3], W = in[4];
  const int Do = window_output_size(D, window, stride, 0);
  const int Ho = window_output_size(H, window, stride, 0);
  const int Wo = window_output_size(W, window, stride, 0);
  MaxPoolResult<T> r{BasicTensor<T>(Shape{N, C, Do, Ho, Wo}, T{0}), {}};
  r.argmax.resize(r.output.size());
  const T* x = input.data().data();
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const std::size_t base = static_cast<std::size_t>(nc) * D * H * W;
    for (int od = 0; od < Do; ++od) {
      for (int oh = 0; oh < Ho; ++oh) {
        for (int ow = 0; ow < Wo; ++ow, ++o) {
          std::size_t best = base + (static_cast<std::size_t>(od * stride) * H + oh * stride) * W +
                             ow * stride;
          T best_v = x[best];
          for (int kd = 0; kd < window; ++kd) {
            for (int kh = 0; kh < window; ++kh) {
              const std::size_t row =
                  base + (static_cast<std::size_t>(od * stride + kd) * H + oh * stride + kh) * W;
              for (int kw = 0; kw < window; ++kw) {
                const std::size_t idx = row + ow * stride + kw;
                if (x[idx] > best_v) {
                  best_v = x[idx];
                  best = idx;
                }
              }
            }
          }
          r.output[o] = best_v;
          r.argmax[o] = best;
        }
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> maxpool3d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                                  const BasicTensor<T>& grad_out) {
  if (argmax.size() != grad_out.size()) {
    throw ShapeError("maxpool3d backward: argmax map does not match grad_out");
  }
  BasicTensor<T> gx(input_shape, T{0});
  for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += grad_out[i];
  return gx;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  out.drop_grad();
  for (auto& v : out.data()) v = v < T{0} ? T{0} : v;  // NaN passes through
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out) {
  require_same_shape(input.shape(), grad_out.shape(), "relu backward");
  BasicTensor<T> gx(input.shape(), T{0});
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = input[i] > T{0} ? grad_out[i] : T{0};
  return gx;
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) {
    return T{1} / (T{1} + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  out.drop_grad();
  for (auto& v : out.data()) v = sigmoid_scalar(v);
  return out;
}

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& output, const BasicTensor<T>& grad_out) {
  require_same_shape(output.shape(), grad_out.shape(), "sigmoid backward");
  BasicTensor<T> gx(output.shape(), T{0});
  for (std::size_t i = 0; i < gx.size(); ++i) {
    gx[i] = grad_out[i] * output[i] * (T{1} - output[i]);
  }
  return gx;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                      const BasicTensor<T>& bias) {
  require_rank(input.shape(), 2, "linear input");
  require_rank(weights.shape(), 2, "linear weights");
  require_rank(bias.shape(), 1, "linear bias");
  const int N = input.dim(0), F = input.dim(1), G = weights.dim(1);
  if (weights.dim(0) != F || bias.dim(0) != G) {
    throw ShapeError("linear: input " + shape_to_string(input.shape()) + ", weights " +
                     shape_to_string(weights.shape()) + ", bias " + shape_to_string(bias.shape()));
  }
  BasicTensor<T> out(Shape{N, G}, T{0});
  for (int n = 0; n < N; ++n) {
    T* row = out.data().data() + static_cast<std::size_t>(n) * G;
    for (int g = 0; g < G; ++g) row[g] = bias[g];
    for (int f = 0; f < F; ++f) {
      const T xv = input[static_cast<std::size_t>(n) * F + f];
      const T* wr = weights.data().data() + static_cast<std::size_t>(f) * G;
      for (int g = 0; g < G; ++g) row[g] += xv * wr[g];
    }
  }
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                               const BasicTensor<T>& grad_out) {
  const int N = input.dim(0), F = input.dim(1), G = weights.dim(1);
  require_same_shape(grad_out.shape(), Shape{N, G}, "linear backward grad_out");
  LinearGrads<T> g{BasicTensor<T>(input.shape(), T{0}), BasicTensor<T>(weights.shape(), T{0}),
                   BasicTensor<T>(Shape{G}, T{0})};
  for (int n = 0; n < N; ++n) {
    const T* gr = grad_out.data().data() + static_cast<std::size_t>(n) * G;
    for (int gi = 0; gi < G; ++gi) g.bias[gi] += gr[gi];
    for (int f = 0; f < F; ++f) {
      const T xv = input[static_cast<std::size_t>(n) * F + f];
      const T* wr = weights.data().data() + static_cast<std::size_t>(f) * G;
      T* gwr = g.weights.data().data() + static_cast<std::size_t>(f) * G;
      T acc{0};
      for (int gi = 0; gi < G; ++gi) {
        acc += wr[gi] * gr[gi];
        gwr[gi] += xv * gr[gi];
      }
      g.input[static_cast<std::size_t>(n) * F + f] = acc;
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& input) {
  require_rank(input.shape(), 2, "softmax input");
  const int N = input.dim(0), K = input.dim(1);
  BasicTensor<T> out(input.shape(), T{0});
  for (int n = 0; n < N; ++n) {
    const T* x = input.data().data() + static_cast<std::size_t>(n) * K;
    T* y = out.data().data() + static_cast<std::size_t>(n) * K;
    const T m = *std::max_element(x, x + K);
    T sum{0};
    for (int i = 0; i < K; ++i) {
      y[i] = std::exp(x[i] - m);
      sum += y[i];
    }
    for (int i = 0; i < K; ++i) y[i] /= sum;
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& output, const BasicTensor<T>& grad_out) {
  require_same_shape(output.shape(), grad_out.shape(), "softmax backward");
  const int N = output.dim(0), K = output.dim(1);
  BasicTensor<T> gx(output.shape(), T{0});
  for (int n = 0; n < N; ++n) {
    const std::size_t off = static_cast<std::size_t>(n) * K;
    T dot{0};
    for (int i = 0; i < K; ++i) dot += grad_out[off + i] * output[off + i];
    for (int i = 0; i < K; ++i) gx[off + i] = output[off + i] * (grad_out[off + i] - dot);
  }
  return gx;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input) {
  require_rank(input.shape(), 5, "global_avg_pool input");
  const int N = input.dim(0), C = input.dim(1);
  const std::size_t vox = static_cast<std::size_t>(input.dim(2)) * input.dim(3) * input.dim(4);
  BasicTensor<T> out(Shape{N, C}, T{0});
  for (int nc = 0; nc < N * C; ++nc) {
    const T* x = input.data().data() + nc * vox;
    T sum{0};
    for (std::size_t i = 0; i < vox; ++i) sum += x[i];
    out[static_cast<std::size_t>(nc)] = sum / static_cast<T>(vox);
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const Shape& input_shape, const BasicTensor<T>& grad_out) {
  require_rank(input_shape, 5, "global_avg_pool backward");
  require_same_shape(grad_out.shape(), Shape{input_shape[0], input_shape[1]},
                     "global_avg_pool backward grad_out");
  const std::size_t vox =
      static_cast<std::size_t>(input_shape[2]) * input_shape[3] * input_shape[4];
  BasicTensor<T> gx(input_shape, T{0});
  for (std::size_t nc = 0; nc < grad_out.size(); ++nc) {
    const T v = grad_out[nc] / static_cast<T>(vox);
    std::fill_n(gx.data().data() + nc * vox, vox, v);
  }
  return gx;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a.shape(), 5, "concat input");
  require_rank(b.shape(), 5, "concat input");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3) ||
      a.dim(4) != b.dim(4)) {
    throw ShapeError("concat: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  }
  const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  const std::size_t vox = static_cast<std::size_t>(a.dim(2)) * a.dim(3) * a.dim(4);
  BasicTensor<T> out(Shape{N, Ca + Cb, a.dim(2), a.dim(3), a.dim(4)}, T{0});
  for (int n = 0; n < N; ++n) {
    T* dst = out.data().data() + static_cast<std::size_t>(n) * (Ca + Cb) * vox;
    std::copy_n(a.data().data() + static_cast<std::size_t>(n) * Ca * vox, Ca * vox, dst);
    std::copy_n(b.data().data() + static_cast<std::size_t>(n) * Cb * vox, Cb * vox,
                dst + Ca * vox);
  }
  return out;
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>& t,
                                                         int first_channels) {
  require_rank(t.shape(), 5, "split input");
  const int N = t.dim(0), C = t.dim(1);
  if (first_channels < 1 || first_channels >= C) throw ShapeError("split: bad channel count");
  const int Cb = C - first_channels;
  const std::size_t vox = static_cast<std::size_t>(t.dim(2)) * t.dim(3) * t.dim(4);
  BasicTensor<T> a(Shape{N, first_channels, t.dim(2), t.dim(3), t.dim(4)}, T{0});
  BasicTensor<T> b(Shape{N, Cb, t.dim(2), t.dim(3), t.dim(4)}, T{0});
  for (int n = 0; n < N; ++n) {
    const T* src = t.data().data() + static_cast<std::size_t>(n) * C * vox;
    std::copy_n(src, first_channels * vox,
                a.data().data() + static_cast<std::size_t>(n) * first_channels * vox);
    std::copy_n(src + first_channels * vox, Cb * vox,
                b.data().data() + static_cast<std::size_t>(n) * Cb * vox);
  }
  return {std::move(a), std::move(b)};
}

namespace {

template <typename T>
void check_residual(const BasicTensor<T>& input, const Conv3dParams<T>& c1,
                    const Conv3dParams<T>& c2) {
  require_rank(input.shape(), 5, "residual block input");
  for (const auto* c : {&c1, &c2}) {
    c->validate();
    if (c->in_channels() != input.dim(1) || c->out_channels() != input.dim(1) ||
        c->stride != 1 || 2 * c->padding != c->kernel() - 1) {
      throw ShapeError("residual block convs must preserve shape and channel count (" +
                       std::to_string(input.dim(1)) + " channels)");
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> residual_block_forward(const BasicTensor<T>& input, const Conv3dParams<T>& conv1,
                                      const Conv3dParams<T>& conv2) {
  check_residual(input, conv1, conv2);
  BasicTensor<T> h = relu(conv3d_forward(input, conv1));
  BasicTensor<T> sum = conv3d_forward(h, conv2);
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += input[i];
  return relu(sum);
}

template <typename T>
ResidualGrads<T> residual_block_backward(const BasicTensor<T>& input, const Conv3dParams<T>& conv1,
                                         const Conv3dParams<T>& conv2,
                                         const BasicTensor<T>& grad_out) {
  check_residual(input, conv1, conv2);
  require_same_shape(grad_out.shape(), input.shape(), "residual block backward grad_out");
  const BasicTensor<T> pre1 = conv3d_forward(input, conv1);
  const BasicTensor<T> h = relu(pre1);
  BasicTensor<T> sum = conv3d_forward(h, conv2);
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += input[i];

  const BasicTensor<T> g_sum = relu_backward(sum, grad_out);
  Conv3dGrads<T> g2 = conv3d_backward(h, conv2, g_sum);
  const BasicTensor<T> g_pre1 = relu_backward(pre1, g2.input);
  Conv3dGrads<T> g1 = conv3d_backward(input, conv1, g_pre1);
  BasicTensor<T> gx = g1.input;
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g_sum[i];
  return {std::move(gx), std::move(g1), std::move(g2)};
}

// ---------------------------------------------------------------------------
// Modules
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void accumulate(BasicTensor<T>& param, const BasicTensor<T>& grad) {
  param.enable_grad();
  auto g = param.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad[i];
}

template <typename T>
void require_cache(const BasicTensor<T>& cache, const char* layer) {
  if (cache.empty()) throw ShapeError(std::string(layer) + ": backward called before forward");
}

}  // namespace

template <typename T>
void Differentiable<T>::zero_grad() {
  for (auto& [name, p] : parameters()) p->zero_grad();
}

template <typename T>
Conv3d<T>::Conv3d(int in_channels, int out_channels, int kernel, int stride, int padding)
    : params_{BasicTensor<T>(Shape{out_channels, in_channels, kernel, kernel, kernel}, T{0}),
              BasicTensor<T>(Shape{out_channels}, T{0}), stride, padding} {
  params_.validate();
}

template <typename T>
Conv3d<T>::Conv3d(Conv3dParams<T> params) : params_(std::move(params)) {
  params_.validate();
}

template <typename T>
void Conv3d<T>::init(std::uint64_t seed) {
  const int k = params_.kernel();
  const double fan_in = static_cast<double>(params_.in_channels()) * k * k * k;
  const auto scale = static_cast<float>(std::sqrt(6.0 / fan_in));
  Rng rng(seed);
  for (auto& v : params_.weights.data()) v = static_cast<T>(rng.symmetric_float(scale));
  for (auto& v : params_.bias.data()) v = T{0};
}

template <typename T>
BasicTensor<T> Conv3d<T>::forward(const BasicTensor<T>& input) {
  cached_input_ = input;
  cached_input_.drop_grad();
  return conv3d_forward(input, params_);
}

template <typename T>
BasicTensor<T> Conv3d<T>::backward(const BasicTensor<T>& grad_output) {
  require_cache(cached_input_, "conv3d");
  Conv3dGrads<T> g = conv3d_backward(cached_input_, params_, grad_output);
  accumulate(params_.weights, g.weights);
  accumulate(params_.bias, g.bias);
  return std::move(g.input);
}

template <typename T>
void Conv3d<T>::collect_parameters(const std::string& prefix, NamedParams<T>& out) {
  out.emplace_back(prefix + "weight", &params_.weights);
  out.emplace_back(prefix + "bias", &params_.bias);
}

template <typename T>
BasicTensor<T> ReLU<T>::forward(const BasicTensor<T>& input) {
  cached_input_ = input;
  cached_input_.drop_grad();
  return relu(input);
}

template <typename T>
BasicTensor<T> ReLU<T>::backward(const BasicTensor<T>& grad_output) {
  require_cache(cached_input_, "relu");
  return relu_backward(cached_input_, grad_output);
}

template <typename T>
BasicTensor<T> Sigmoid<T>::forward(const BasicTensor<T>& input) {
  cached_output_ = sigmoid(input);
  return cached_output_;
}

template <typename T>
BasicTensor<T> Sigmoid<T>::backward(const BasicTensor<T>& grad_output) {
  require_cache(cached_output_, "sigmoid");
  return sigmoid_backward(cached_output_, grad_output);
}

template <typename T>
BasicTensor<T> Softmax<T>::forward(const BasicTensor<T>& input) {
  cached_output_ = softmax(input);
  return cached_output_;
}

template <typename T>
BasicTensor<T> Softmax<T>::backward(const BasicTensor<T>& grad_output) {
  require_cache(cached_output_, "softmax");
  return softmax_backward(cached_output_, grad_output);
}

template <typename T>
BasicTensor<T> MaxPool3d<T>::forward(const BasicTensor<T>& input) {
  MaxPoolResult<T> r = maxpool3d(input, window_, stride_);
  input_shape_ = input.shape();
  argmax_ = std::move(r.argmax);
  return std::move(r.output);
}

template <typename T>
BasicTensor<T> MaxPool3d<T>::backward(const BasicTensor<T>& grad_output) {
  if (input_shape_.empty()) throw ShapeError("maxpool3d: backward called before forward");
  return maxpool3d_backward(input_shape_, argmax_, grad_output);
}

template <typename T>
Linear<T>::Linear(int in_features, int out_features)
    : weights_(Shape{in_features, out_features}, T{0}), bias_(Shape{out_features}, T{0}) {}

template <typename T>
void Linear<T>::init(std::uint64_t seed) {
  const auto scale = static_cast<float>(std::sqrt(6.0 / weights_.dim(0)));
  Rng rng(seed);
  for (auto& v : weights_.data()) v = static_cast<T>(rng.symmetric_float(scale));
  for (auto& v : bias_.data()) v = T{0};
}

template <typename T>
BasicTensor<T> Linear<T>::forward(const BasicTensor<T>& input) {
  cached_input_ = input;
  cached_input_.drop_grad();
  return linear(input, weights_, bias_);
}

template <typename T>
BasicTensor<T> Linear<T>::backward(const BasicTensor<T>& grad_output) {
  require_cache(cached_input_, "linear");
  LinearGrads<T> g = linear_backward(cached_input_, weights_, grad_output);
  accumulate(weights_, g.weights);
  accumulate(bias_, g.bias);
  return std::move(g.input);
}

template <typename T>
void Linear<T>::collect_parameters(const std::string& prefix, NamedParams<T>& out) {
  out.emplace_back(prefix + "weight", &weights_);
  out.emplace_back(prefix + "bias", &bias_);
}

template <typename T>
BasicTensor<T> GlobalAvgPool<T>::forward(const BasicTensor<T>& input) {
  input_shape_ = input.shape();
  return global_avg_pool(input);
}

template <typename T>
BasicTensor<T> GlobalAvgPool<T>::backward(const BasicTensor<T>& grad_output) {
  if (input_shape_.empty()) throw ShapeError("global_avg_pool: backward called before forward");
  return global_avg_pool_backward(input_shape_, grad_output);
}

template <typename T>
ResidualBlock<T>::ResidualBlock(int channels)
    : conv1_(channels, channels, 3, 1, 1), conv2_(channels, channels, 3, 1, 1) {}

template <typename T>
void ResidualBlock<T>::init(std::uint64_t seed) {
  conv1_.init(derive_seed(seed, "conv1"));
  conv2_.init(derive_seed(seed, "conv2"));
}

template <typename T>
BasicTensor<T> ResidualBlock<T>::forward(const BasicTensor<T>& input) {
  check_residual(input, conv1_.params(), conv2_.params());
  cached_input_ = input;
  cached_input_.drop_grad();
  cached_hidden_pre_ = conv1_.forward(input);
  BasicTensor<T> sum = conv2_.forward(relu(cached_hidden_pre_));
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += input[i];
  cached_sum_ = sum;
  return relu(sum);
}

template <typename T>
BasicTensor<T> ResidualBlock<T>::backward(const BasicTensor<T>& grad_output) {
  require_cache(cached_sum_, "residual_block");
  const BasicTensor<T> g_sum = relu_backward(cached_sum_, grad_output);
  const BasicTensor<T> g_h = conv2_.backward(g_sum);
  BasicTensor<T> gx = conv1_.backward(relu_backward(cached_hidden_pre_, g_h));
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g_sum[i];
  return gx;
}

template <typename T>
void ResidualBlock<T>::collect_parameters(const std::string& prefix, NamedParams<T>& out) {
  conv1_.collect_parameters(prefix + "conv1.", out);
  conv2_.collect_parameters(prefix + "conv2.", out);
}

template <typename T>
BasicTensor<T> Sequential<T>::forward(const BasicTensor<T>& input) {
  BasicTensor<T> x = input;
  for (auto& layer : layers_) x = layer->forward(x);
  return x;
}

template <typename T>
BasicTensor<T> Sequential<T>::backward(const BasicTensor<T>& grad_output) {
  BasicTensor<T> g = grad_output;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

template <typename T>
void Sequential<T>::collect_parameters(const std::string& prefix, NamedParams<T>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_parameters(prefix + std::to_string(i) + ".", out);
  }
}

template <typename Src, typename Dst>
void copy_parameters(const NamedParams<Src>& src, const NamedParams<Dst>& dst) {
  if (src.size() != dst.size()) throw ShapeError("copy_parameters: parameter count mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto& [sname, s] = src[i];
    const auto& [dname, d] = dst[i];
    if (sname != dname || s->shape() != d->shape()) {
      throw ShapeError("copy_parameters: mismatch at " + sname + " vs " + dname);
    }
    for (std::size_t j = 0; j < s->size(); ++j) (*d)[j] = static_cast<Dst>((*s)[j]);
  }
}

#define PND_INSTANTIATE_LAYERS(T)                                                              \
  template struct Conv3dParams<T>;                                                             \
  template BasicTensor<T> conv3d_forward(const BasicTensor<T>&, const Conv3dParams<T>&);       \
  template Conv3dGrads<T> conv3d_backward(const BasicTensor<T>&, const Conv3dParams<T>&,       \
                                          const BasicTensor<T>&);                              \
  template MaxPoolResult<T> maxpool3d(const BasicTensor<T>&, int, int);                        \
  template BasicTensor<T> maxpool3d_backward(const Shape&, const std::vector<std::size_t>&,    \
                                             const BasicTensor<T>&);                           \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                         \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template T sigmoid_scalar(T);                                                                \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                      \
  template BasicTensor<T> sigmoid_backward(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                 const BasicTensor<T>&);                                       \
  template LinearGrads<T> linear_backward(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                          const BasicTensor<T>&);                              \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                      \
  template BasicTensor<T> softmax_backward(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                              \
  template BasicTensor<T> global_avg_pool_backward(const Shape&, const BasicTensor<T>&);       \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);       \
  template std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>&,     \
                                                                    int);                      \
  template BasicTensor<T> residual_block_forward(const BasicTensor<T>&, const Conv3dParams<T>&, \
                                                 const Conv3dParams<T>&);                      \
  template ResidualGrads<T> residual_block_backward(                                           \
      const BasicTensor<T>&, const Conv3dParams<T>&, const Conv3dParams<T>&,                   \
      const BasicTensor<T>&);                                                                  \
  template class Differentiable<T>;                                                            \
  template class Conv3d<T>;                                                                    \
  template class ReLU<T>;                                                                      \
  template class Sigmoid<T>;                                                                   \
  template class Softmax<T>;                                                                   \
  template class MaxPool3d<T>;                                                                 \
  template class Linear<T>;                                                                    \
  template class GlobalAvgPool<T>;                                                             \
  template class ResidualBlock<T>;                                                             \
  template class Sequential<T>;

PND_INSTANTIATE_LAYERS(float)
PND_INSTANTIATE_LAYERS(double)

#undef PND_INSTANTIATE_LAYERS

template void copy_parameters(const NamedParams<float>&, const NamedParams<float>&);
template void copy_parameters(const NamedParams<float>&, const NamedParams<double>&);
template void copy_parameters(const NamedParams<double>&, const NamedParams<float>&);

}  // namespace pnd
