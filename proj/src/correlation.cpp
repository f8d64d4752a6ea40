#include "memflow/correlation.hpp"

#include <cmath>

namespace memflow {

template <typename T>
PyramidVars<T> build_pyramid(Var<T> f1, Var<T> f2, int pyramid_levels) {
  if (f1.h() != f2.h() || f1.w() != f2.w() || f1.cols() != f2.cols())
    throw Error(ErrorCode::ShapeMismatch, "correlation features must have the same shape");
  if (pyramid_levels < 1) throw Error(ErrorCode::InvalidConfig, "pyramid_levels must be >= 1");
  const int h = f1.h(), w = f1.w();
  const int div = 1 << (pyramid_levels - 1);
  if (h % div != 0 || w % div != 0)
    throw Error(ErrorCode::IndivisibleResolution, "feature grid not divisible by 2^(levels-1)");
  PyramidVars<T> pyr;
  const T s = T(1) / std::sqrt(static_cast<T>(f1.cols()));
  pyr.levels.push_back(ops::matmul_nt(f1, f2, s));
  pyr.shapes.push_back({h, w});
  for (int k = 1; k < pyramid_levels; ++k) {
    const auto prev = pyr.shapes.back();
    pyr.levels.push_back(ops::avg_pool_cols(pyr.levels.back(), prev.height, prev.width));
    pyr.shapes.push_back({prev.height / 2, prev.width / 2});
  }
  return pyr;
}

template <typename T>
CorrelationPyramid<T> build_pyramid(const FeatureMap<T>& f1, const FeatureMap<T>& f2, int pyramid_levels) {
  Tape<T> tape(nullptr, false);
  auto a = tape.constant(f1.data, f1.height, f1.width);
  auto b = tape.constant(f2.data, f2.height, f2.width);
  if (f1.height != f2.height || f1.width != f2.width)
    throw Error(ErrorCode::ShapeMismatch, "correlation features must have the same shape");
  PyramidVars<T> vars = build_pyramid(a, b, pyramid_levels);
  CorrelationPyramid<T> out;
  out.height = f1.height;
  out.width = f1.width;
  out.shapes = vars.shapes;
  for (const auto& v : vars.levels) out.levels.push_back(v.value());
  return out;
}

template <typename T>
Var<T> lookup(const PyramidVars<T>& pyramid, Var<T> flow, int radius) {
  return ops::lookup(pyramid.levels, pyramid.shapes, flow, radius);
}

template <typename T>
FeatureMap<T> lookup(const CorrelationPyramid<T>& pyramid, const FlowField& flow, int radius) {
  if (flow.height() != pyramid.height || flow.width() != pyramid.width)
    throw Error(ErrorCode::ShapeMismatch, "flow grid does not match the correlation grid");
  Tape<T> tape(nullptr, false);
  PyramidVars<T> vars;
  vars.shapes = pyramid.shapes;
  for (const auto& l : pyramid.levels) vars.levels.push_back(tape.constant(l, pyramid.height, pyramid.width));
  Var<T> f = tape.constant(flow.as_matrix<T>(), pyramid.height, pyramid.width);
  Var<T> out = lookup(vars, f, radius);
  return FeatureMap<T>{pyramid.height, pyramid.width, 8, out.value()};
}

template PyramidVars<float> build_pyramid(Var<float>, Var<float>, int);
template PyramidVars<double> build_pyramid(Var<double>, Var<double>, int);
template CorrelationPyramid<float> build_pyramid(const FeatureMap<float>&, const FeatureMap<float>&, int);
template CorrelationPyramid<double> build_pyramid(const FeatureMap<double>&, const FeatureMap<double>&, int);
template Var<float> lookup(const PyramidVars<float>&, Var<float>, int);
template Var<double> lookup(const PyramidVars<double>&, Var<double>, int);
template FeatureMap<float> lookup(const CorrelationPyramid<float>&, const FlowField&, int);
template FeatureMap<double> lookup(const CorrelationPyramid<double>&, const FlowField&, int);

}  // namespace memflow
