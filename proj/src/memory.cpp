#include "memflow/memory.hpp"

#include "memflow/ops.hpp"

#include <cmath>

namespace memflow {
namespace {

template <typename T>
Mat<T> randn(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

}  // namespace

template <typename T>
ProjectionParams<T> ProjectionParams<T>::init(int feature_dim, int key_dim, int value_in_dim, int value_dim,
                                              std::mt19937_64& rng) {
  ProjectionParams p;
  p.w_q = randn<T>(feature_dim, key_dim, 1.0 / std::sqrt(feature_dim), rng);
  p.w_k = randn<T>(feature_dim, key_dim, 1.0 / std::sqrt(feature_dim), rng);
  p.w_v = randn<T>(value_in_dim, value_dim, 1.0 / std::sqrt(value_in_dim), rng);
  p.alpha = T(0);
  return p;
}

template <typename T>
ProjectionParams<T> ProjectionParams<T>::from(const ParamSet<T>& params, const std::string& prefix) {
  ProjectionParams p;
  p.w_q = params.at(prefix + ".w_q");
  p.w_k = params.at(prefix + ".w_k");
  p.w_v = params.at(prefix + ".w_v");
  p.alpha = params.at(prefix + ".alpha")(0, 0);
  return p;
}

template <typename T>
void ProjectionParams<T>::store(ParamSet<T>& params, const std::string& prefix) const {
  params.add(prefix + ".w_q", w_q);
  params.add(prefix + ".w_k", w_k);
  params.add(prefix + ".w_v", w_v);
  params.add(prefix + ".alpha", Mat<T>::Constant(1, 1, alpha));
}

template <typename T>
ProjectionVars<T> ProjectionVars<T>::bind(Tape<T>& tape, const std::string& prefix) {
  return ProjectionVars{tape.param(prefix + ".w_q"), tape.param(prefix + ".w_k"), tape.param(prefix + ".w_v"),
                        tape.param(prefix + ".alpha")};
}

template <typename T>
std::vector<int> MemoryBuffer<T>::frame_ids() const {
  std::vector<int> ids;
  ids.reserve(blocks_.size());
  for (const auto& b : blocks_) ids.push_back(b.frame_id);
  return ids;
}

template <typename T>
Mat<T> MemoryBuffer<T>::keys() const {
  if (empty()) return Mat<T>();
  Mat<T> out(size(), blocks_.front().keys.cols());
  Eigen::Index r = 0;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    out.middleRows(r, it->keys.rows()) = it->keys;
    r += it->keys.rows();
  }
  return out;
}

template <typename T>
Mat<T> MemoryBuffer<T>::values() const {
  if (empty()) return Mat<T>();
  Mat<T> out(size(), blocks_.front().values.cols());
  Eigen::Index r = 0;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    out.middleRows(r, it->values.rows()) = it->values;
    r += it->values.rows();
  }
  return out;
}

template <typename T>
MemoryBuffer<T> MemoryBuffer<T>::with_frame(MemoryBlock<T> block, int height, int width, int l_max) const {
  if (!empty() && (height != height_ || width != width_))
    throw Error(ErrorCode::ShapeMismatch, "memory block resolution differs from the buffer");
  if (!empty() && block.frame_id <= blocks_.back().frame_id)
    throw Error(ErrorCode::InvalidConfig, "memory frame ids must be strictly increasing");
  MemoryBuffer out;
  if (l_max <= 0) return out;
  out.height_ = height;
  out.width_ = width;
  out.blocks_ = blocks_;
  out.blocks_.push_back(std::move(block));
  while (out.length() > l_max) out.blocks_.erase(out.blocks_.begin());
  return out;
}

double rescale_coefficient(Eigen::Index memory_tokens, int height, int width, double n_avg, int key_dim) {
  if (!(n_avg > 1.0)) throw Error(ErrorCode::DegenerateBase, "n_avg must be > 1");
  if (memory_tokens < 0 || height * width < 1) throw Error(ErrorCode::ShapeMismatch, "empty attention grid");
  const double n = static_cast<double>(memory_tokens) + static_cast<double>(height) * width;
  return std::log(n) / std::log(n_avg) / std::sqrt(static_cast<double>(key_dim));
}

double attention_coefficient(const Config& cfg, Eigen::Index memory_tokens, int height, int width) {
  if (!cfg.rescale) return 1.0 / std::sqrt(static_cast<double>(cfg.key_dim));
  return rescale_coefficient(memory_tokens, height, width, cfg.n_avg, cfg.key_dim);
}

template <typename T>
ReadOutVars<T> read_out(Tape<T>& tape, Var<T> f_c, Var<T> f_m, const MemoryBuffer<T>& buffer,
                        const ProjectionVars<T>& proj, T coefficient) {
  if (f_c.rows() != f_m.rows() || f_c.cols() != proj.w_q.rows() || f_m.cols() != proj.w_v.rows())
    throw Error(ErrorCode::ShapeMismatch, "read_out: feature widths do not match the projections");
  if (proj.w_v.cols() != f_m.cols())
    throw Error(ErrorCode::ShapeMismatch, "read_out: value width must equal the motion feature width");
  if (!buffer.empty() && (buffer.height() != f_c.h() || buffer.width() != f_c.w()))
    throw Error(ErrorCode::ShapeMismatch, "read_out: buffer resolution differs from the query grid");

  Var<T> q = ops::matmul(f_c, proj.w_q);
  std::vector<Var<T>> keys{ops::matmul(f_c, proj.w_k)};
  std::vector<Var<T>> values{ops::matmul(f_m, proj.w_v)};
  const auto& blocks = buffer.blocks();
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    const bool live = it->tape_serial == tape.serial() && it->key_var.valid();
    keys.push_back(live ? it->key_var : tape.constant(it->keys));
    values.push_back(live ? it->value_var : tape.constant(it->values));
  }
  Var<T> k = keys.size() == 1 ? keys[0] : ops::concat_rows(keys);
  Var<T> v = values.size() == 1 ? values[0] : ops::concat_rows(values);
  Var<T> attn = ops::softmax_rows(ops::matmul_nt(q, k, coefficient));
  Var<T> mixed = ops::matmul(attn, v);
  Var<T> f_am = ops::add(f_m, ops::scale_by(mixed, proj.alpha));
  return {f_am, attn};
}

template <typename T>
FeatureMap<T> read_out(const FeatureMap<T>& f_c, const FeatureMap<T>& f_m, const MemoryBuffer<T>& buffer,
                       const ProjectionParams<T>& proj, const Config& cfg, Mat<T>* attention) {
  if (f_c.height != f_m.height || f_c.width != f_m.width)
    throw Error(ErrorCode::ShapeMismatch, "read_out: context and motion grids differ");
  ParamSet<T> ps;
  proj.store(ps, "p");
  Tape<T> tape(&ps, false);
  auto vars = ProjectionVars<T>::bind(tape, "p");
  Var<T> c = tape.constant(f_c.data, f_c.height, f_c.width);
  Var<T> m = tape.constant(f_m.data, f_m.height, f_m.width);
  const T coef = static_cast<T>(attention_coefficient(cfg, buffer.size(), f_c.height, f_c.width));
  auto out = read_out(tape, c, m, buffer, vars, coef);
  if (attention) *attention = out.attention.value();
  return FeatureMap<T>{f_c.height, f_c.width, f_c.scale, out.f_am.value()};
}

template <typename T>
MemoryBuffer<T> update(const MemoryBuffer<T>& buffer, Var<T> f_c, Var<T> f_m_final, const ProjectionVars<T>& proj,
                       int frame_id, int l_max, bool keep_graph) {
  if (f_c.rows() != f_m_final.rows()) throw Error(ErrorCode::ShapeMismatch, "update: grids differ");
  if (l_max <= 0) return MemoryBuffer<T>{};
  Var<T> k = ops::matmul(f_c, proj.w_k);
  Var<T> v = ops::matmul(f_m_final, proj.w_v);
  MemoryBlock<T> block;
  block.frame_id = frame_id;
  block.keys = k.value();
  block.values = v.value();
  if (keep_graph) {
    block.key_var = k;
    block.value_var = v;
    block.tape_serial = k.tape->serial();
  }
  return buffer.with_frame(std::move(block), f_c.h(), f_c.w(), l_max);
}

template <typename T>
MemoryBuffer<T> update(const MemoryBuffer<T>& buffer, const FeatureMap<T>& f_c, const FeatureMap<T>& f_m_final,
                       const ProjectionParams<T>& proj, int frame_id, int l_max) {
  if (f_c.height != f_m_final.height || f_c.width != f_m_final.width)
    throw Error(ErrorCode::ShapeMismatch, "update: context and motion grids differ");
  ParamSet<T> ps;
  proj.store(ps, "p");
  Tape<T> tape(&ps, false);
  auto vars = ProjectionVars<T>::bind(tape, "p");
  return update(buffer, tape.constant(f_c.data, f_c.height, f_c.width),
                tape.constant(f_m_final.data, f_m_final.height, f_m_final.width), vars, frame_id, l_max, false);
}

#define MEMFLOW_INSTANTIATE_MEMORY(T)                                                                              \
  template struct ProjectionParams<T>;                                                                             \
  template struct ProjectionVars<T>;                                                                               \
  template class MemoryBuffer<T>;                                                                                  \
  template ReadOutVars<T> read_out(Tape<T>&, Var<T>, Var<T>, const MemoryBuffer<T>&, const ProjectionVars<T>&, T); \
  template FeatureMap<T> read_out(const FeatureMap<T>&, const FeatureMap<T>&, const MemoryBuffer<T>&,              \
                                  const ProjectionParams<T>&, const Config&, Mat<T>*);                             \
  template MemoryBuffer<T> update(const MemoryBuffer<T>&, Var<T>, Var<T>, const ProjectionVars<T>&, int, int, bool); \
  template MemoryBuffer<T> update(const MemoryBuffer<T>&, const FeatureMap<T>&, const FeatureMap<T>&,              \
                                  const ProjectionParams<T>&, int, int);

MEMFLOW_INSTANTIATE_MEMORY(float)
MEMFLOW_INSTANTIATE_MEMORY(double)

}  // namespace memflow
