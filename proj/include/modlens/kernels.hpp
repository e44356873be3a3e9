#pragma once

#include <cstdint>
#include <vector>

#include "modlens/tensor.hpp"

// Compute kernels for the network. The primary implementations are
// OpenMP-parallel; namespace `serial` holds straightforward single-threaded
// reference versions used by the tests and the kernel benchmark.
//
// Determinism: each output element is produced by exactly one thread with a
// fixed per-element accumulation order, so results do not depend on the
// thread count. Loops marked `omp simd reduction` have a vector-width-fixed
// order chosen at compile time and are likewise reproducible run to run.

namespace modlens::kernels {

// 2D convolution (cross-correlation), odd kernel, stride 1, zero "same"
// padding. w is [out_c][in_c][k][k]; bias has out_c entries.
template <typename T>
void conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& w,
                    const std::vector<T>& bias, Tensor4<T>& y);

template <typename T>
void conv2d_backward_input(const Tensor4<T>& dy, const Tensor4<T>& w,
                           Tensor4<T>& dx);

// Accumulates into dw/db.
template <typename T>
void conv2d_backward_params(const Tensor4<T>& x, const Tensor4<T>& dy,
                            Tensor4<T>& dw, std::vector<T>& db);

template <typename T>
void leaky_relu_forward(const Tensor4<T>& x, T slope, Tensor4<T>& y);

// dx = dy * (x > 0 ? 1 : slope), elementwise on the pre-activation x.
template <typename T>
void leaky_relu_backward(const Tensor4<T>& x, const Tensor4<T>& dy, T slope,
                         Tensor4<T>& dx);

// 2x2 max pooling, stride 2. H and W must be even. argmax records the
// winning position (0..3) per output element for the backward pass.
template <typename T>
void maxpool2_forward(const Tensor4<T>& x, Tensor4<T>& y,
                      std::vector<std::uint8_t>& argmax);

template <typename T>
void maxpool2_backward(const Tensor4<T>& dy,
                       const std::vector<std::uint8_t>& argmax, Tensor4<T>& dx);

// Nearest-neighbour 2x upsampling.
template <typename T>
void upsample2_forward(const Tensor4<T>& x, Tensor4<T>& y);

template <typename T>
void upsample2_backward(const Tensor4<T>& dy, Tensor4<T>& dx);

// Mean over each (b, c) plane; out has n*c entries, b-major.
template <typename T>
void global_avg_pool(const Tensor4<T>& x, std::vector<T>& out);

template <typename T>
void global_avg_pool_backward(const std::vector<T>& dout, Tensor4<T>& dx);

template <typename T>
void sigmoid_forward(const Tensor4<T>& x, Tensor4<T>& y);

// dx = dy * y * (1 - y), with y the sigmoid output.
template <typename T>
void sigmoid_backward(const Tensor4<T>& y, const Tensor4<T>& dy, Tensor4<T>& dx);

namespace serial {

template <typename T>
void conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& w,
                    const std::vector<T>& bias, Tensor4<T>& y);

template <typename T>
void conv2d_backward_input(const Tensor4<T>& dy, const Tensor4<T>& w,
                           Tensor4<T>& dx);

template <typename T>
void conv2d_backward_params(const Tensor4<T>& x, const Tensor4<T>& dy,
                            Tensor4<T>& dw, std::vector<T>& db);

template <typename T>
void maxpool2_forward(const Tensor4<T>& x, Tensor4<T>& y,
                      std::vector<std::uint8_t>& argmax);

template <typename T>
void upsample2_forward(const Tensor4<T>& x, Tensor4<T>& y);

}  // namespace serial

}  // namespace modlens::kernels
