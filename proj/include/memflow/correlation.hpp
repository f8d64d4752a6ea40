#pragma once

#include "memflow/ops.hpp"

#include <vector>

namespace memflow {

/// All-pairs correlation of two feature maps with its 2x2 average-pooled
/// pyramid. Level k is stored (H*W) x (H/2^k * W/2^k): row = query pixel,
/// column = target pixel in raster order.
template <typename T>
struct CorrelationPyramid {
  int height = 0;
  int width = 0;
  std::vector<Mat<T>> levels;
  std::vector<ops::LevelShape> shapes;

  /// C_k[(i, j), (p, q)] with (i, j) / (p, q) as (row, col).
  T at(int level, int i, int j, int p, int q) const {
    return levels[level](i * width + j, p * shapes[level].width + q);
  }
};

/// Graph-side pyramid; levels are nodes on a tape.
template <typename T>
struct PyramidVars {
  std::vector<Var<T>> levels;
  std::vector<ops::LevelShape> shapes;
};

/// Level 0 = F1 F2^T / sqrt(D). Throws ShapeMismatch or
/// IndivisibleResolution when H, W are not divisible by 2^(levels-1).
template <typename T>
PyramidVars<T> build_pyramid(Var<T> f1, Var<T> f2, int pyramid_levels);

template <typename T>
CorrelationPyramid<T> build_pyramid(const FeatureMap<T>& f1, const FeatureMap<T>& f2, int pyramid_levels);

/// (2r+1)^2 bilinear samples per level around (x + flow) / 2^k; channels are
/// ordered level, dy, dx.
template <typename T>
Var<T> lookup(const PyramidVars<T>& pyramid, Var<T> flow, int radius);

template <typename T>
FeatureMap<T> lookup(const CorrelationPyramid<T>& pyramid, const FlowField& flow, int radius);

}  // namespace memflow
