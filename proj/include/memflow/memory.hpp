#pragma once

#include "memflow/autograd.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace memflow {

/// Learnable read-out projections: q = f_c W_q, k = f_c W_k, v = f_m W_v,
/// and the residual gate alpha, which starts at exactly 0.
template <typename T>
struct ProjectionParams {
  Mat<T> w_q;  // D x D_k
  Mat<T> w_k;  // D x D_k
  Mat<T> w_v;  // D_v_in x D_v
  T alpha = T(0);

  static ProjectionParams init(int feature_dim, int key_dim, int value_in_dim, int value_dim, std::mt19937_64& rng);
  static ProjectionParams from(const ParamSet<T>& params, const std::string& prefix);
  void store(ParamSet<T>& params, const std::string& prefix) const;
};

template <typename T>
struct ProjectionVars {
  Var<T> w_q, w_k, w_v, alpha;

  static ProjectionVars bind(Tape<T>& tape, const std::string& prefix);
};

/// Projected tokens of one past frame. When the block was written on a live
/// tape, key_var / value_var keep it attached to that graph.
template <typename T>
struct MemoryBlock {
  int frame_id = 0;
  Mat<T> keys;    // (H*W) x D_k
  Mat<T> values;  // (H*W) x D_v
  Var<T> key_var;
  Var<T> value_var;
  std::uint64_t tape_serial = 0;
};

/// Rolling store of past keys and values. Immutable: update() and reset()
/// return new buffers. Rows are exposed newest frame first, matching the
/// concatenation order [current; memory].
template <typename T>
class MemoryBuffer {
 public:
  MemoryBuffer() = default;

  bool empty() const { return blocks_.empty(); }
  /// Number of stored frames l.
  int length() const { return static_cast<int>(blocks_.size()); }
  /// Number of stored tokens L = l * H * W.
  Eigen::Index size() const { return empty() ? 0 : static_cast<Eigen::Index>(length()) * height_ * width_; }
  int height() const { return height_; }
  int width() const { return width_; }

  /// Oldest first, strictly increasing.
  std::vector<int> frame_ids() const;
  Mat<T> keys() const;
  Mat<T> values() const;
  /// Oldest first.
  const std::vector<MemoryBlock<T>>& blocks() const { return blocks_; }

  /// Prepends a frame and drops the oldest ones beyond l_max.
  MemoryBuffer with_frame(MemoryBlock<T> block, int height, int width, int l_max) const;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<MemoryBlock<T>> blocks_;
};

/// log(L + H*W) / log(n_avg) / sqrt(D_k). Throws DegenerateBase if n_avg <= 1.
double rescale_coefficient(Eigen::Index memory_tokens, int height, int width, double n_avg, int key_dim);

/// Attention logit scale for a read-out with `memory_tokens` stored tokens,
/// honoring Config::rescale.
double attention_coefficient(const Config& cfg, Eigen::Index memory_tokens, int height, int width);

template <typename T>
struct ReadOutVars {
  Var<T> f_am;
  Var<T> attention;  // (H*W) x (H*W + L), rows sum to 1
};

/// f_am = f_m + alpha * softmax(coef * q k^T) v with k, v the current-frame
/// projections stacked over the buffer.
template <typename T>
ReadOutVars<T> read_out(Tape<T>& tape, Var<T> f_c, Var<T> f_m, const MemoryBuffer<T>& buffer,
                        const ProjectionVars<T>& proj, T coefficient);

template <typename T>
FeatureMap<T> read_out(const FeatureMap<T>& f_c, const FeatureMap<T>& f_m, const MemoryBuffer<T>& buffer,
                       const ProjectionParams<T>& proj, const Config& cfg, Mat<T>* attention = nullptr);

/// Writes [f_c W_k ; f_m W_v] of the finished frame. With keep_graph the new
/// block stays differentiable on `tape` for backpropagation through time.
template <typename T>
MemoryBuffer<T> update(const MemoryBuffer<T>& buffer, Var<T> f_c, Var<T> f_m_final, const ProjectionVars<T>& proj,
                       int frame_id, int l_max, bool keep_graph);

template <typename T>
MemoryBuffer<T> update(const MemoryBuffer<T>& buffer, const FeatureMap<T>& f_c, const FeatureMap<T>& f_m_final,
                       const ProjectionParams<T>& proj, int frame_id, int l_max);

template <typename T>
MemoryBuffer<T> reset(const MemoryBuffer<T>&) {
  return MemoryBuffer<T>{};
}

}  // namespace memflow
