#pragma once

#include "memflow/correlation.hpp"
#include "memflow/memory.hpp"
#include "memflow/model.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace memflow {

void init_update_block(EncoderParams& params, const Config& cfg, std::mt19937_64& rng);

template <typename T>
struct GruVars {
  Var<T> hidden;
  Var<T> delta;
};

/// Two stacked large-kernel gated recurrent cells over [f_c, f_m, f_am]
/// followed by the residual-flow head.
template <typename T>
GruVars<T> gru_step(Tape<T>& tape, Var<T> hidden, Var<T> f_c, Var<T> f_m, Var<T> f_am);

/// Per-frame encoder outputs reused across the pairs a frame takes part in.
template <typename T>
struct FrameVars {
  Var<T> features;
  Var<T> context;
  Var<T> hidden;
};

template <typename T>
struct PairTrace {
  std::vector<Var<T>> flows_full;  // one per iteration, or only the last
  std::vector<Var<T>> flows_coarse;
  Var<T> flow;     // final 1/8 flow
  Var<T> motion;   // motion feature at the final flow
  Var<T> hidden;   // final GRU state
  Var<T> context;
};

/// Refinement loop for one frame pair on a tape: lookup, motion encoding,
/// memory read-out and GRU update, repeated `iters` times.
template <typename T>
PairTrace<T> estimate_pair(Tape<T>& tape, const Config& cfg, const FrameVars<T>& first, Var<T> second_features,
                           const MemoryBuffer<T>& buffer, int iters, const Mat<T>* init_flow, bool upsample_all);

/// Motion feature of frames (a, b) evaluated at a fixed coarse flow.
template <typename T>
Var<T> motion_at(Tape<T>& tape, const Config& cfg, Var<T> features_a, Var<T> features_b, Var<T> flow);

/// Sum_i gamma^(N-i) * mean-L1(f_i, gt) for one pair on a tape.
template <typename T>
Var<T> sequence_loss(const std::vector<Var<T>>& iterates, const Mat<T>& gt, T gamma);

/// Iterates per pair against ground truth, averaged over pairs.
/// Throws LengthMismatch when the lists disagree.
double sequence_loss(const std::vector<std::vector<FlowField>>& iterates, const std::vector<FlowField>& gts,
                     double gamma);

struct EstimatorState {
  FeatureMap<float> hidden;
  FlowField flow;  // last final 1/8 estimate, on the padded grid
  MemoryBuffer<float> buffer;
  int frame_index = 0;
};

struct PairEstimate {
  std::vector<FlowField> flows;  // N full-resolution iterates
  EstimatorState state;
  FlowField coarse;              // final 1/8 flow
  FeatureMap<float> motion;      // motion feature at the final flow
  FeatureMap<float> context;     // f_c of the first frame
};

/// One online step: estimates I_t -> I_t1 with the current memory, then
/// writes the frame into memory. Uses cfg.iters_infer, l_max, rescale and
/// warm_start.
PairEstimate estimate_pair(const EstimatorState& state, const ImageFrame& frame_t, const ImageFrame& frame_t1,
                           const EncoderParams& params, const Config& cfg);

/// Online estimation over a video; T frames give T-1 flows. Throws
/// TooFewFrames for fewer than two frames.
std::vector<FlowField> run_video(const std::vector<ImageFrame>& frames, const EncoderParams& params,
                                 const Config& cfg);

/// run_video returning every iterate of every pair (for iteration sweeps).
std::vector<std::vector<FlowField>> run_video_iterates(const std::vector<ImageFrame>& frames,
                                                       const EncoderParams& params, const Config& cfg);

}  // namespace memflow
