#pragma once

#include <cstdint>
#include <vector>

#include "qotr/autograd.hpp"

namespace qotr {

// Differentiable primitives. Every function records one tape node whose
// backward rule is defined next to its forward in ops.cpp.

// Elementwise arithmetic with numpy-style broadcasting.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);

template <typename T> Var<T> scale(Var<T> x, T factor);
template <typename T> Var<T> add_scalar(Var<T> x, T c);

template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> leaky_relu(Var<T> x, T slope);
// tanh approximation.
template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> square(Var<T> x);

// Full reductions to a scalar (shape {}).
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);

// [.., m, k] x [.., k, n] -> [.., m, n]; leading dims broadcast.
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
// x [N, in] * w [in, out] + b [out].
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
// Swap the last two axes.
template <typename T> Var<T> transpose(Var<T> x);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);

// Columns [begin, end) of the last axis.
template <typename T> Var<T> slice_last(Var<T> x, std::size_t begin, std::size_t end);
template <typename T> Var<T> concat_last(const std::vector<Var<T>>& parts);
// Concatenate along axis 0.
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);

// out.flat[i] = x.flat[index[i]], or 0 where index[i] < 0. Backward is a
// scatter-add, so repeated indices accumulate.
template <typename T>
Var<T> gather(Var<T> x, const std::vector<std::int64_t>& index, Shape out_shape);

// Numerically stable (max-subtracted). Throws NumericError on non-finite
// input.
template <typename T> Var<T> softmax_lastdim(Var<T> x);

// Normalizes each last-axis slice: gamma * (x - mean) / sqrt(var + eps) + beta.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

// Cross-correlation, zero padding. x [B,C,H,W], w [O,C,kh,kw], bias [O].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t pad);

// 2x2 mean pooling with stride 2 over the last two axes (floor size).
template <typename T> Var<T> avg_pool2(Var<T> x);

// Samples x [C,H,W] at point = (px, py), pixels outside the image read
// as zero. Returns [C].
template <typename T> Var<T> bilinear_sample(Var<T> x, Var<T> point);

// Deformable convolution with 'same' padding and stride 1.
// x [C,H,W], offsets [2*kh*kw, H, W] laid out as (dy, dx) pairs per tap in
// row-major tap order, w [O,C,kh,kw], bias [O]. Returns [O,H,W].
template <typename T>
Var<T> deformable_conv2d(Var<T> x, Var<T> offsets, Var<T> w, Var<T> bias);

// Value-level helpers shared with non-differentiable code paths.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad);
// Zero-padded bilinear read at (y, x) of a single channel plane.
template <typename T>
T bilinear_at(const T* plane, std::size_t h, std::size_t w, T y, T x);

}  // namespace qotr
