#pragma once

#include "memflow/autograd.hpp"

#include <utility>
#include <vector>

/// Differentiable primitives over (H*W) x C tensors recorded on a Tape.
/// All spatial ops use replicate (clamped) padding.
namespace memflow::ops {

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
/// a * s where s is a 1x1 node.
template <typename T> Var<T> scale_by(Var<T> a, Var<T> s);
/// a + row broadcast over rows.
template <typename T> Var<T> add_row(Var<T> a, Var<T> row);
/// 1 - a
template <typename T> Var<T> one_minus(Var<T> a);

template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> detach(Var<T> a);

template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_cols(Var<T> a, int start, int count);
/// Stacks along rows; the result is a plain matrix (h = rows, w = 1).
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// s * a * b^T
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b, T s);
/// x W + b, spatial shape of x preserved.
template <typename T> Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);

/// k x k convolution, weight laid out (k*k*Cin) x Cout in (ky, kx, cin) order.
template <typename T> Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int k, int stride);
/// Depth-wise k x k convolution, weight (k*k) x C, stride 1.
template <typename T> Var<T> depthwise(Var<T> x, Var<T> weight, Var<T> bias, int k);
/// Per-channel normalization over pixels, no affine.
template <typename T> Var<T> instance_norm(Var<T> x, T eps = T(1e-5));

template <typename T> Var<T> softmax_rows(Var<T> x);

/// 2x2 mean pool of the trailing spatial axes of a correlation matrix whose
/// columns index an (h2 x w2) grid.
template <typename T> Var<T> avg_pool_cols(Var<T> c, int h2, int w2);

struct LevelShape {
  int height;
  int width;
};

/// Windowed bilinear lookup into correlation levels at (x + flow) / 2^k.
/// Coordinates are clamped to the level extent; the clamped axis carries no
/// gradient to the flow.
template <typename T>
Var<T> lookup(const std::vector<Var<T>>& levels, const std::vector<LevelShape>& shapes, Var<T> flow, int radius);

/// Convex upsampling: each fine pixel is a softmax-weighted combination of
/// factor * flow over the 3x3 coarse neighbourhood. mask has 9*factor^2
/// channels, index k*factor^2 + sy*factor + sx.
template <typename T> Var<T> convex_upsample(Var<T> flow, Var<T> mask, int factor);

/// Forward bilinear splat of `values` along a fixed flow; overlapping
/// contributions are normalized by accumulated weight, empty targets are 0.
template <typename T> Var<T> splat(Var<T> values, const Mat<T>& flow);

/// Sum over channels of |a - target|, averaged over rows.
template <typename T> Var<T> l1_mean(Var<T> a, const Mat<T>& target);
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);

/// Bilinear splat of `values` (h*w x C) along `flow` (h*w x 2). Returns the
/// normalized result and writes accumulated weights (h*w) when requested.
template <typename T>
Mat<T> splat_forward(const Mat<T>& values, const Mat<T>& flow, int h, int w, Mat<T>* weights = nullptr);

}  // namespace memflow::ops
