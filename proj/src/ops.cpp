#include "memflow/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace memflow::ops {
namespace {

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": operand shapes differ");
}

inline int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

/// Source row for every (output pixel, tap) of a k x k replicate-padded
/// window; shared by conv2d and depthwise.
struct Window {
  int out_h, out_w;
  std::vector<int> src;  // (out_h*out_w) x (k*k)
};

Window make_window(int h, int w, int k, int stride) {
  const int pad = k / 2;
  Window win;
  win.out_h = (h + 2 * pad - k) / stride + 1;
  win.out_w = (w + 2 * pad - k) / stride + 1;
  win.src.resize(static_cast<std::size_t>(win.out_h) * win.out_w * k * k);
  std::size_t n = 0;
  for (int oy = 0; oy < win.out_h; ++oy)
    for (int ox = 0; ox < win.out_w; ++ox)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const int iy = clampi(oy * stride - pad + ky, 0, h - 1);
          const int ix = clampi(ox * stride - pad + kx, 0, w - 1);
          win.src[n++] = iy * w + ix;
        }
  return win;
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same(a, b, "add");
  return a.tape->record(a.value() + b.value(), a.h(), a.w(), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same(a, b, "sub");
  return a.tape->record(a.value() - b.value(), a.h(), a.w(), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, -g);
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same(a, b, "mul");
  Mat<T> out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), a.h(), a.w(), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a.id, g.cwiseProduct(t.value(b.id)));
    t.accumulate(b.id, g.cwiseProduct(t.value(a.id)));
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return a.tape->record(a.value() * s, a.h(), a.w(), {a},
                        [a, s](Tape<T>& t, const Mat<T>& g) { t.accumulate(a.id, g * s); });
}

template <typename T>
Var<T> scale_by(Var<T> a, Var<T> s) {
  if (s.value().size() != 1) throw Error(ErrorCode::ShapeMismatch, "scale_by: scalar expected");
  return a.tape->record(a.value() * s.value()(0, 0), a.h(), a.w(), {a, s}, [a, s](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a.id, g * t.value(s.id)(0, 0));
    Mat<T> gs(1, 1);
    gs(0, 0) = g.cwiseProduct(t.value(a.id)).sum();
    t.accumulate(s.id, gs);
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error(ErrorCode::ShapeMismatch, "add_row: bad row");
  Mat<T> out = a.value().rowwise() + RowVec<T>(row.value().row(0));
  return a.tape->record(std::move(out), a.h(), a.w(), {a, row}, [a, row](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a.id, g);
    t.accumulate(row.id, g.colwise().sum());
  });
}

template <typename T>
Var<T> one_minus(Var<T> a) {
  Mat<T> out = (T(1) - a.value().array()).matrix();
  return a.tape->record(std::move(out), a.h(), a.w(), {a},
                        [a](Tape<T>& t, const Mat<T>& g) { t.accumulate(a.id, -g); });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Mat<T> out = a.value().cwiseMax(T(0));
  return a.tape->record(std::move(out), a.h(), a.w(), {a}, [a](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a.id, (t.value(a.id).array() > T(0)).select(g, T(0)));
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Mat<T> out = (T(1) / (T(1) + (-a.value().array()).exp())).matrix();
  const int rid = a.tape->next_id();
  return a.tape->record(std::move(out), a.h(), a.w(), {a}, [a, rid](Tape<T>& t, const Mat<T>& g) {
    const auto y = t.value(rid).array();
    t.accumulate(a.id, (g.array() * y * (T(1) - y)).matrix());
  });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  Mat<T> out = a.value().array().tanh().matrix();
  const int rid = a.tape->next_id();
  return a.tape->record(std::move(out), a.h(), a.w(), {a}, [a, rid](Tape<T>& t, const Mat<T>& g) {
    const auto y = t.value(rid).array();
    t.accumulate(a.id, (g.array() * (T(1) - y * y)).matrix());
  });
}

template <typename T>
Var<T> detach(Var<T> a) {
  return a.tape->constant(a.value(), a.h(), a.w());
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw Error(ErrorCode::ShapeMismatch, "concat_cols: row counts differ");
    cols += p.cols();
  }
  Mat<T> out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return parts[0].tape->record(std::move(out), parts[0].h(), parts[0].w(), parts,
                               [parts](Tape<T>& t, const Mat<T>& g) {
                                 Eigen::Index c = 0;
                                 for (const auto& p : parts) {
                                   const Eigen::Index n = t.value(p.id).cols();
                                   t.accumulate(p.id, g.middleCols(c, n));
                                   c += n;
                                 }
                               });
}

template <typename T>
Var<T> slice_cols(Var<T> a, int start, int count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw Error(ErrorCode::ShapeMismatch, "slice_cols: range");
  Mat<T> out = a.value().middleCols(start, count);
  return a.tape->record(std::move(out), a.h(), a.w(), {a}, [a, start, count](Tape<T>& t, const Mat<T>& g) {
    Mat<T>* buf = t.grad_buffer(a.id);
    if (buf) buf->middleCols(start, count) += g;
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw Error(ErrorCode::ShapeMismatch, "concat_rows: column counts differ");
    rows += p.rows();
  }
  Mat<T> out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return parts[0].tape->record(std::move(out), static_cast<int>(rows), 1, parts,
                               [parts](Tape<T>& t, const Mat<T>& g) {
                                 Eigen::Index r = 0;
                                 for (const auto& p : parts) {
                                   const Eigen::Index n = t.value(p.id).rows();
                                   t.accumulate(p.id, g.middleRows(r, n));
                                   r += n;
                                 }
                               });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "matmul: inner dimensions differ");
  Mat<T> out = a.value() * b.value();
  const int h = a.rows() == a.h() * a.w() ? a.h() : static_cast<int>(out.rows());
  const int w = a.rows() == a.h() * a.w() ? a.w() : 1;
  return a.tape->record(std::move(out), h, w, {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(a.id)) t.accumulate(a.id, g * t.value(b.id).transpose());
    if (t.requires_grad(b.id)) t.accumulate(b.id, t.value(a.id).transpose() * g);
  });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b, T s) {
  if (a.cols() != b.cols()) throw Error(ErrorCode::ShapeMismatch, "matmul_nt: inner dimensions differ");
  Mat<T> out = s * (a.value() * b.value().transpose());
  return a.tape->record(std::move(out), a.h(), a.w(), {a, b}, [a, b, s](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(a.id)) t.accumulate(a.id, s * (g * t.value(b.id)));
    if (t.requires_grad(b.id)) t.accumulate(b.id, s * (g.transpose() * t.value(a.id)));
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  if (x.cols() != weight.rows() || bias.cols() != weight.cols())
    throw Error(ErrorCode::ShapeMismatch, "linear: weight does not match input channels");
  Mat<T> out = x.value() * weight.value();
  out.rowwise() += RowVec<T>(bias.value().row(0));
  return x.tape->record(std::move(out), x.h(), x.w(), {x, weight, bias},
                        [x, weight, bias](Tape<T>& t, const Mat<T>& g) {
                          if (t.requires_grad(x.id)) t.accumulate(x.id, g * t.value(weight.id).transpose());
                          if (t.requires_grad(weight.id)) t.accumulate(weight.id, t.value(x.id).transpose() * g);
                          t.accumulate(bias.id, g.colwise().sum());
                        });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int k, int stride) {
  const int h = x.h(), w = x.w();
  const int cin = static_cast<int>(x.cols());
  if (weight.rows() != static_cast<Eigen::Index>(k) * k * cin || bias.cols() != weight.cols())
    throw Error(ErrorCode::ShapeMismatch, "conv2d: weight does not match input channels");
  Window win = make_window(h, w, k, stride);
  const int taps = k * k;
  const Eigen::Index n_out = static_cast<Eigen::Index>(win.out_h) * win.out_w;
  Mat<T> cols(n_out, static_cast<Eigen::Index>(taps) * cin);
  const Mat<T>& xv = x.value();
  for (Eigen::Index p = 0; p < n_out; ++p)
    for (int tap = 0; tap < taps; ++tap)
      cols.row(p).segment(static_cast<Eigen::Index>(tap) * cin, cin) = xv.row(win.src[p * taps + tap]);
  Mat<T> out = cols * weight.value();
  out.rowwise() += RowVec<T>(bias.value().row(0));
  return x.tape->record(
      std::move(out), win.out_h, win.out_w, {x, weight, bias},
      [x, weight, bias, cols = std::move(cols), src = std::move(win.src), taps, cin](Tape<T>& t, const Mat<T>& g) {
        if (t.requires_grad(weight.id)) t.accumulate(weight.id, cols.transpose() * g);
        t.accumulate(bias.id, g.colwise().sum());
        if (Mat<T>* gx = t.grad_buffer(x.id)) {
          Mat<T> gcols = g * t.value(weight.id).transpose();
          for (Eigen::Index p = 0; p < gcols.rows(); ++p)
            for (int tap = 0; tap < taps; ++tap)
              gx->row(src[p * taps + tap]) += gcols.row(p).segment(static_cast<Eigen::Index>(tap) * cin, cin);
        }
      });
}

template <typename T>
Var<T> depthwise(Var<T> x, Var<T> weight, Var<T> bias, int k) {
  const int h = x.h(), w = x.w();
  const int taps = k * k;
  if (weight.rows() != taps || weight.cols() != x.cols() || bias.cols() != x.cols())
    throw Error(ErrorCode::ShapeMismatch, "depthwise: weight does not match input channels");
  Window win = make_window(h, w, k, 1);
  const Mat<T>& xv = x.value();
  const Mat<T>& wv = weight.value();
  Mat<T> out(xv.rows(), xv.cols());
  out.rowwise() = RowVec<T>(bias.value().row(0));
  for (Eigen::Index p = 0; p < out.rows(); ++p)
    for (int tap = 0; tap < taps; ++tap) out.row(p) += xv.row(win.src[p * taps + tap]).cwiseProduct(wv.row(tap));
  return x.tape->record(std::move(out), h, w, {x, weight, bias},
                        [x, weight, bias, src = std::move(win.src), taps](Tape<T>& t, const Mat<T>& g) {
                          const Mat<T>& xv = t.value(x.id);
                          const Mat<T>& wv = t.value(weight.id);
                          t.accumulate(bias.id, g.colwise().sum());
                          Mat<T>* gx = t.grad_buffer(x.id);
                          Mat<T>* gw = t.grad_buffer(weight.id);
                          for (Eigen::Index p = 0; p < g.rows(); ++p)
                            for (int tap = 0; tap < taps; ++tap) {
                              const int s = src[p * taps + tap];
                              if (gx) gx->row(s) += g.row(p).cwiseProduct(wv.row(tap));
                              if (gw) gw->row(tap) += g.row(p).cwiseProduct(xv.row(s));
                            }
                        });
}

template <typename T>
Var<T> instance_norm(Var<T> x, T eps) {
  const Mat<T>& xv = x.value();
  const T n = static_cast<T>(xv.rows());
  RowVec<T> mu = xv.colwise().mean();
  Mat<T> centered = xv.rowwise() - mu;
  RowVec<T> inv_std = ((centered.array().square().colwise().sum() / n) + eps).rsqrt().matrix();
  Mat<T> out = centered.array().rowwise() * inv_std.array();
  const int rid = x.tape->next_id();
  return x.tape->record(std::move(out), x.h(), x.w(), {x}, [x, rid, inv_std, n](Tape<T>& t, const Mat<T>& g) {
    const Mat<T>& y = t.value(rid);
    RowVec<T> g_mean = g.colwise().sum() / n;
    RowVec<T> gy_mean = g.cwiseProduct(y).colwise().sum() / n;
    Mat<T> gx = (g.rowwise() - g_mean) - (y.array().rowwise() * gy_mean.array()).matrix();
    gx.array().rowwise() *= inv_std.array();
    t.accumulate(x.id, gx);
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  const Mat<T>& xv = x.value();
  Mat<T> out = xv.colwise() - xv.rowwise().maxCoeff();
  out = out.array().exp().matrix();
  out.array().colwise() /= out.rowwise().sum().array();
  const int rid = x.tape->next_id();
  return x.tape->record(std::move(out), x.h(), x.w(), {x}, [x, rid](Tape<T>& t, const Mat<T>& g) {
    const Mat<T>& y = t.value(rid);
    Eigen::Matrix<T, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
    Mat<T> gx = (g.colwise() - dot).cwiseProduct(y);
    t.accumulate(x.id, gx);
  });
}

template <typename T>
Var<T> avg_pool_cols(Var<T> c, int h2, int w2) {
  if (c.cols() != static_cast<Eigen::Index>(h2) * w2 || h2 % 2 != 0 || w2 % 2 != 0)
    throw Error(ErrorCode::IndivisibleResolution, "avg_pool_cols: grid must be even");
  const int ph = h2 / 2, pw = w2 / 2;
  const Mat<T>& cv = c.value();
  Mat<T> out(cv.rows(), static_cast<Eigen::Index>(ph) * pw);
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x) {
      const int a = (2 * y) * w2 + 2 * x;
      out.col(y * pw + x) = T(0.25) * (cv.col(a) + cv.col(a + 1) + cv.col(a + w2) + cv.col(a + w2 + 1));
    }
  return c.tape->record(std::move(out), c.h(), c.w(), {c}, [c, ph, pw, w2](Tape<T>& t, const Mat<T>& g) {
    Mat<T>* gc = t.grad_buffer(c.id);
    if (!gc) return;
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x) {
        const int a = (2 * y) * w2 + 2 * x;
        const auto q = (T(0.25) * g.col(y * pw + x)).eval();
        gc->col(a) += q;
        gc->col(a + 1) += q;
        gc->col(a + w2) += q;
        gc->col(a + w2 + 1) += q;
      }
  });
}

namespace {

/// Bilinear sample setup along one axis with clamping.
template <typename T>
struct Axis {
  int i0, i1;
  T frac;
  bool clamped;
};

template <typename T>
Axis<T> axis(T coord, int extent) {
  Axis<T> a{};
  const T hi = static_cast<T>(extent - 1);
  // Non-finite coordinates (a diverged flow) sample the origin instead of
  // overflowing the integer index.
  if (!std::isfinite(coord)) coord = T(0);
  a.clamped = coord < T(0) || coord > hi;
  const T c = std::min(std::max(coord, T(0)), hi);
  a.i0 = std::min(static_cast<int>(std::floor(c)), extent - 1);
  a.i1 = std::min(a.i0 + 1, extent - 1);
  a.frac = c - static_cast<T>(a.i0);
  return a;
}

}  // namespace

template <typename T>
Var<T> lookup(const std::vector<Var<T>>& levels, const std::vector<LevelShape>& shapes, Var<T> flow, int radius) {
  if (levels.empty() || levels.size() != shapes.size()) throw Error(ErrorCode::ShapeMismatch, "lookup: levels");
  const int h = flow.h(), w = flow.w();
  if (flow.cols() != 2 || levels[0].rows() != flow.rows())
    throw Error(ErrorCode::ShapeMismatch, "lookup: flow grid does not match correlation");
  if (radius < 0) throw Error(ErrorCode::InvalidConfig, "lookup: radius must be >= 0");
  const int win = 2 * radius + 1;
  const int per_level = win * win;
  const int n_levels = static_cast<int>(levels.size());
  const Mat<T>& fv = flow.value();
  Mat<T> out(fv.rows(), static_cast<Eigen::Index>(n_levels) * per_level);
  for (int lvl = 0; lvl < n_levels; ++lvl) {
    const Mat<T>& cv = levels[lvl].value();
    const int lh = shapes[lvl].height, lw = shapes[lvl].width;
    const T inv = T(1) / static_cast<T>(1 << lvl);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int p = y * w + x;
        const T cx = (static_cast<T>(x) + fv(p, 0)) * inv;
        const T cy = (static_cast<T>(y) + fv(p, 1)) * inv;
        for (int dy = -radius; dy <= radius; ++dy) {
          const Axis<T> ay = axis(cy + static_cast<T>(dy), lh);
          for (int dx = -radius; dx <= radius; ++dx) {
            const Axis<T> ax = axis(cx + static_cast<T>(dx), lw);
            const T v00 = cv(p, ay.i0 * lw + ax.i0), v01 = cv(p, ay.i0 * lw + ax.i1);
            const T v10 = cv(p, ay.i1 * lw + ax.i0), v11 = cv(p, ay.i1 * lw + ax.i1);
            out(p, lvl * per_level + (dy + radius) * win + (dx + radius)) =
                (T(1) - ay.frac) * ((T(1) - ax.frac) * v00 + ax.frac * v01) +
                ay.frac * ((T(1) - ax.frac) * v10 + ax.frac * v11);
          }
        }
      }
  }
  std::vector<Var<T>> parents(levels);
  parents.push_back(flow);
  return flow.tape->record(
      std::move(out), h, w, parents, [levels, shapes, flow, radius, h, w, per_level, win](Tape<T>& t, const Mat<T>& g) {
        const Mat<T>& fv = t.value(flow.id);
        Mat<T>* gf = t.grad_buffer(flow.id);
        for (std::size_t lvl = 0; lvl < levels.size(); ++lvl) {
          const Mat<T>& cv = t.value(levels[lvl].id);
          Mat<T>* gc = t.grad_buffer(levels[lvl].id);
          const int lh = shapes[lvl].height, lw = shapes[lvl].width;
          const T inv = T(1) / static_cast<T>(1 << lvl);
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              const int p = y * w + x;
              const T cx = (static_cast<T>(x) + fv(p, 0)) * inv;
              const T cy = (static_cast<T>(y) + fv(p, 1)) * inv;
              for (int dy = -radius; dy <= radius; ++dy) {
                const Axis<T> ay = axis(cy + static_cast<T>(dy), lh);
                for (int dx = -radius; dx <= radius; ++dx) {
                  const Axis<T> ax = axis(cx + static_cast<T>(dx), lw);
                  const T go = g(p, static_cast<int>(lvl) * per_level + (dy + radius) * win + (dx + radius));
                  if (go == T(0)) continue;
                  const int i00 = ay.i0 * lw + ax.i0, i01 = ay.i0 * lw + ax.i1;
                  const int i10 = ay.i1 * lw + ax.i0, i11 = ay.i1 * lw + ax.i1;
                  if (gc) {
                    (*gc)(p, i00) += go * (T(1) - ay.frac) * (T(1) - ax.frac);
                    (*gc)(p, i01) += go * (T(1) - ay.frac) * ax.frac;
                    (*gc)(p, i10) += go * ay.frac * (T(1) - ax.frac);
                    (*gc)(p, i11) += go * ay.frac * ax.frac;
                  }
                  if (gf) {
                    const T v00 = cv(p, i00), v01 = cv(p, i01), v10 = cv(p, i10), v11 = cv(p, i11);
                    if (!ax.clamped && ax.i1 != ax.i0)
                      (*gf)(p, 0) += go * inv * ((T(1) - ay.frac) * (v01 - v00) + ay.frac * (v11 - v10));
                    if (!ay.clamped && ay.i1 != ay.i0)
                      (*gf)(p, 1) += go * inv * ((T(1) - ax.frac) * (v10 - v00) + ax.frac * (v11 - v01));
                  }
                }
              }
            }
        }
      });
}

template <typename T>
Var<T> convex_upsample(Var<T> flow, Var<T> mask, int factor) {
  const int h = flow.h(), w = flow.w();
  const int ff = factor * factor;
  if (flow.cols() != 2 || mask.rows() != flow.rows() || mask.cols() != 9 * ff)
    throw Error(ErrorCode::ShapeMismatch, "convex_upsample: mask must have 9*factor^2 channels");
  const int oh = h * factor, ow = w * factor;
  const Mat<T>& fv = flow.value();
  const Mat<T>& mv = mask.value();
  Mat<T> out(static_cast<Eigen::Index>(oh) * ow, 2);
  // Softmax weights per (coarse pixel, sub-pixel), kept for backward.
  Mat<T> weights(fv.rows(), 9 * ff);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int p = y * w + x;
      int nb[9];
      for (int k = 0; k < 9; ++k) nb[k] = clampi(y + k / 3 - 1, 0, h - 1) * w + clampi(x + k % 3 - 1, 0, w - 1);
      for (int s = 0; s < ff; ++s) {
        T mx = mv(p, s);
        for (int k = 1; k < 9; ++k) mx = std::max(mx, mv(p, k * ff + s));
        T z = 0;
        for (int k = 0; k < 9; ++k) z += (weights(p, k * ff + s) = std::exp(mv(p, k * ff + s) - mx));
        T ou = 0, ov = 0;
        for (int k = 0; k < 9; ++k) {
          const T wk = (weights(p, k * ff + s) /= z);
          ou += wk * fv(nb[k], 0);
          ov += wk * fv(nb[k], 1);
        }
        const int q = (y * factor + s / factor) * ow + x * factor + s % factor;
        out(q, 0) = static_cast<T>(factor) * ou;
        out(q, 1) = static_cast<T>(factor) * ov;
      }
    }
  return flow.tape->record(
      std::move(out), oh, ow, {flow, mask},
      [flow, mask, weights = std::move(weights), h, w, factor, ff, ow](Tape<T>& t, const Mat<T>& g) {
        const Mat<T>& fv = t.value(flow.id);
        Mat<T>* gf = t.grad_buffer(flow.id);
        Mat<T>* gm = t.grad_buffer(mask.id);
        const T fs = static_cast<T>(factor);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const int p = y * w + x;
            int nb[9];
            for (int k = 0; k < 9; ++k) nb[k] = clampi(y + k / 3 - 1, 0, h - 1) * w + clampi(x + k % 3 - 1, 0, w - 1);
            for (int s = 0; s < ff; ++s) {
              const int q = (y * factor + s / factor) * ow + x * factor + s % factor;
              const T gu = g(q, 0), gv = g(q, 1);
              T dots[9];
              T avg = 0;
              for (int k = 0; k < 9; ++k) {
                dots[k] = fs * (gu * fv(nb[k], 0) + gv * fv(nb[k], 1));
                avg += weights(p, k * ff + s) * dots[k];
              }
              for (int k = 0; k < 9; ++k) {
                const T wk = weights(p, k * ff + s);
                if (gm) (*gm)(p, k * ff + s) += wk * (dots[k] - avg);
                if (gf) {
                  (*gf)(nb[k], 0) += fs * wk * gu;
                  (*gf)(nb[k], 1) += fs * wk * gv;
                }
              }
            }
          }
      });
}

namespace {

/// Visits the in-bounds bilinear corners of every splat.
template <typename T, typename Fn>
void for_each_splat(const Mat<T>& flow, int h, int w, Fn&& fn) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int src = y * w + x;
      const T tx = static_cast<T>(x) + flow(src, 0);
      const T ty = static_cast<T>(y) + flow(src, 1);
      if (!(tx > T(-1) && tx < T(w) && ty > T(-1) && ty < T(h))) continue;
      const T fx0 = std::floor(tx), fy0 = std::floor(ty);
      const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
      const T ax = tx - fx0, ay = ty - fy0;
      const int cx[2] = {x0, x0 + 1};
      const int cy[2] = {y0, y0 + 1};
      const T wx[2] = {T(1) - ax, ax};
      const T wy[2] = {T(1) - ay, ay};
      for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 2; ++i) {
          const T wt = wx[i] * wy[j];
          if (wt <= T(0) || cx[i] < 0 || cx[i] >= w || cy[j] < 0 || cy[j] >= h) continue;
          fn(src, cy[j] * w + cx[i], wt);
        }
    }
}

template <typename T>
constexpr T kSplatEps = T(1e-6);

}  // namespace

template <typename T>
Mat<T> splat_forward(const Mat<T>& values, const Mat<T>& flow, int h, int w, Mat<T>* weights) {
  if (values.rows() != static_cast<Eigen::Index>(h) * w || flow.rows() != values.rows() || flow.cols() != 2)
    throw Error(ErrorCode::ShapeMismatch, "splat: values and flow must share the grid");
  Mat<T> acc = Mat<T>::Zero(values.rows(), values.cols());
  Eigen::Matrix<T, Eigen::Dynamic, 1> wsum = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(values.rows());
  for_each_splat(flow, h, w, [&](int src, int dst, T wt) {
    acc.row(dst) += wt * values.row(src);
    wsum(dst) += wt;
  });
  for (Eigen::Index d = 0; d < acc.rows(); ++d) {
    if (wsum(d) > kSplatEps<T>)
      acc.row(d) /= wsum(d);
    else
      acc.row(d).setZero();
  }
  if (weights) *weights = wsum;
  return acc;
}

template <typename T>
Var<T> splat(Var<T> values, const Mat<T>& flow) {
  const int h = values.h(), w = values.w();
  Mat<T> wsum;
  Mat<T> out = splat_forward(values.value(), flow, h, w, &wsum);
  return values.tape->record(std::move(out), h, w, {values},
                             [values, flow, wsum = std::move(wsum), h, w](Tape<T>& t, const Mat<T>& g) {
                               Mat<T>* gv = t.grad_buffer(values.id);
                               if (!gv) return;
                               for_each_splat(flow, h, w, [&](int src, int dst, T wt) {
                                 if (wsum(dst, 0) > kSplatEps<T>) gv->row(src) += (wt / wsum(dst, 0)) * g.row(dst);
                               });
                             });
}

template <typename T>
Var<T> l1_mean(Var<T> a, const Mat<T>& target) {
  if (a.rows() != target.rows() || a.cols() != target.cols())
    throw Error(ErrorCode::ShapeMismatch, "l1_mean: target shape differs");
  const T n = static_cast<T>(a.rows());
  Mat<T> out(1, 1);
  out(0, 0) = (a.value() - target).cwiseAbs().sum() / n;
  return a.tape->record(std::move(out), 1, 1, {a}, [a, target, n](Tape<T>& t, const Mat<T>& g) {
    Mat<T> d = (t.value(a.id) - target).array().sign().matrix() * (g(0, 0) / n);
    t.accumulate(a.id, d);
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  Mat<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record(std::move(out), 1, 1, {a}, [a](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a.id, Mat<T>::Constant(t.value(a.id).rows(), t.value(a.id).cols(), g(0, 0)));
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

#define MEMFLOW_INSTANTIATE_OPS(T)                                                                        \
  template Var<T> add(Var<T>, Var<T>);                                                                    \
  template Var<T> sub(Var<T>, Var<T>);                                                                    \
  template Var<T> mul(Var<T>, Var<T>);                                                                    \
  template Var<T> scale(Var<T>, T);                                                                       \
  template Var<T> scale_by(Var<T>, Var<T>);                                                               \
  template Var<T> add_row(Var<T>, Var<T>);                                                                \
  template Var<T> one_minus(Var<T>);                                                                      \
  template Var<T> relu(Var<T>);                                                                           \
  template Var<T> sigmoid(Var<T>);                                                                        \
  template Var<T> tanh(Var<T>);                                                                           \
  template Var<T> detach(Var<T>);                                                                         \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                                \
  template Var<T> slice_cols(Var<T>, int, int);                                                           \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                                                \
  template Var<T> matmul(Var<T>, Var<T>);                                                                 \
  template Var<T> matmul_nt(Var<T>, Var<T>, T);                                                           \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                                         \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, int);                                               \
  template Var<T> depthwise(Var<T>, Var<T>, Var<T>, int);                                                 \
  template Var<T> instance_norm(Var<T>, T);                                                               \
  template Var<T> softmax_rows(Var<T>);                                                                   \
  template Var<T> avg_pool_cols(Var<T>, int, int);                                                        \
  template Var<T> lookup(const std::vector<Var<T>>&, const std::vector<LevelShape>&, Var<T>, int);        \
  template Var<T> convex_upsample(Var<T>, Var<T>, int);                                                   \
  template Var<T> splat(Var<T>, const Mat<T>&);                                                           \
  template Var<T> l1_mean(Var<T>, const Mat<T>&);                                                         \
  template Var<T> sum(Var<T>);                                                                            \
  template Var<T> mean(Var<T>);                                                                           \
  template Mat<T> splat_forward(const Mat<T>&, const Mat<T>&, int, int, Mat<T>*);

MEMFLOW_INSTANTIATE_OPS(float)
MEMFLOW_INSTANTIATE_OPS(double)

}  // namespace memflow::ops
