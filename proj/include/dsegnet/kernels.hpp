#pragma once

// Raw forward/backward kernels over dense tensors. These know nothing about
// the autodiff graph; dseg/ops.hpp wraps them into differentiable operations.
//
// Weight tensors use Shape{co, ci, kh, kw}. Per-channel vectors (bias, gamma,
// beta, running statistics) are passed as spans of length c.

#include <cstddef>
#include <span>
#include <vector>

#include "dsegnet/tensor.hpp"

namespace dseg {

struct ConvGeometry {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;
};

enum class PoolMode { Avg, Max };

// floor((in + 2p - d(k-1) - 1)/s) + 1; throws DimensionError when < 1.
std::size_t conv_out_extent(std::size_t in, std::size_t k, const ConvGeometry& g);
Shape conv2d_output_shape(const Shape& x, const Shape& weight, const ConvGeometry& g);

// floor((in + 2p - k)/s) + 1; throws DimensionError when the window does not fit.
std::size_t pool_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t pad);

namespace kernels {

// Reference convolution: one accumulator per output, taps in (ci, u, v) order.
template <typename T>
Tensor<T> conv2d_direct(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias, const ConvGeometry& g);

// im2col + GEMM. Accumulates every output in the same tap order as
// conv2d_direct, so the two agree bitwise.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias, const ConvGeometry& g);

template <typename T>
struct Conv2dGrads {
    Tensor<T> input;
    Tensor<T> weight;
    std::vector<T> bias;
};

// Any of the three gradients can be skipped.
template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                               const ConvGeometry& g, bool need_input, bool need_weight, bool need_bias);

// Zero-inflate a kernel: d-1 zero rows/columns between taps.
template <typename T>
Tensor<T> inflate_kernel(const Tensor<T>& weight, std::size_t dilation);

template <typename T>
struct PoolResult {
    Tensor<T> out;
    std::vector<std::size_t> argmax;  // flat input offsets, one per output (max mode only)
};

// Max pooling with implicit -inf padding. Ties go to the first element in
// row-major window order.
template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t padding = 0);

template <typename T>
void scatter_argmax(const Tensor<T>& grad_out, std::span<const std::size_t> argmax, Tensor<T>& grad_in);

template <typename T>
PoolResult<T> global_pool(const Tensor<T>& x, PoolMode mode);
template <typename T>
PoolResult<T> channel_reduce(const Tensor<T>& x, PoolMode mode);

// Separable bilinear sampling table for one axis, half-pixel centres with
// clamping: src = (dst + 0.5) * in/out - 0.5.
struct AxisTaps {
    std::vector<std::size_t> lo;
    std::vector<std::size_t> hi;
    std::vector<double> frac;  // weight of hi; lo gets 1 - frac
};
AxisTaps bilinear_taps(std::size_t in, std::size_t out);

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);
template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& grad_out, const Shape& in_shape);

// Nearest-neighbour resize: src = floor((dst + 0.5) * in/out).
template <typename T>
Tensor<T> nearest_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T>
struct BatchNormCache {
    Tensor<T> normalized;       // x_hat
    std::vector<T> inv_std;     // per channel
};

template <typename T>
struct BatchNormStats {
    std::vector<T> mean;
    std::vector<T> var;  // biased
};

template <typename T>
BatchNormStats<T> batch_stats(const Tensor<T>& x);

// y = gamma * (x - mean) / sqrt(var + eps) + beta with the given statistics.
template <typename T>
Tensor<T> batchnorm_apply(const Tensor<T>& x, std::span<const T> mean, std::span<const T> var,
                          std::span<const T> gamma, std::span<const T> beta, T eps, BatchNormCache<T>* cache);

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts);
template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, std::span<const std::size_t> channels);

}  // namespace kernels
}  // namespace dseg
