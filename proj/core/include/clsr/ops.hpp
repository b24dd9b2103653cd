#pragma once

#include <vector>

#include "clsr/autograd.hpp"
#include "clsr/image.hpp"

// Differentiable tensor operations. Every op records its forward FLOPs in the
// active FlopScope using the convention: one multiply-accumulate = 2 FLOPs,
// bilinear resampling = 8 FLOPs per output element, elementwise work free.
namespace clsr::ops {

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> relu(const Var<T>& x);

/// Scales by a compile-time-constant factor.
template <class T>
Var<T> scale(const Var<T>& x, T factor);

/// x: (Cin, H, W); weight: (Cout, Cin, K, K); bias: (Cout) or undefined.
/// Zero padding on all sides.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad);

/// x: (Cin, H, W); weight: (Cin, Cout, K, K). Output side (H-1)*stride - 2*pad + K.
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride,
                        int pad);

/// (C*r*r, H, W) -> (C, H*r, W*r), channel block [i*r + j] lands at offset (i, j).
template <class T>
Var<T> pixel_shuffle(const Var<T>& x, int r);

template <class T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w);

/// Window that may extend past the borders, filled by reflection.
template <class T>
Var<T> reflect_window(const Var<T>& x, const RoiBox& window);

/// z plus p on the first p.channels() channels of z; other channels untouched.
template <class T>
Var<T> add_leading_channels(const Var<T>& z, const Var<T>& p);

/// (C, H, W) -> (H*W, C).
template <class T>
Var<T> to_tokens(const Var<T>& x);

/// (H*W, C) -> (C, H, W).
template <class T>
Var<T> from_tokens(const Var<T>& t, int h, int w);

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts);

/// Columns [begin, end) of a rank-2 tensor.
template <class T>
Var<T> slice_cols(const Var<T>& a, int begin, int end);

/// (m, k) x (k, n).
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// (m, k) x (n, k)^T.
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);

/// alpha[head] + beta[head] * inv_scale * s - gamma[0] * dist, with dist a
/// constant matrix the same shape as s.
template <class T>
Var<T> attention_logits(const Var<T>& s, const Var<T>& alpha, const Var<T>& beta,
                        const Var<T>& gamma, int head, const Tensor<T>& dist, T inv_scale);

/// Row-wise softmax of a rank-2 tensor.
template <class T>
Var<T> softmax_rows(const Var<T>& x);

/// Mean absolute difference against a constant target.
template <class T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target);

}  // namespace clsr::ops
