#pragma once

#include "memflow/estimator.hpp"

#include <optional>

namespace memflow {

void init_predictor(EncoderParams& params, const Config& cfg, std::mt19937_64& rng);

/// Forward splat of a flow field along itself (bilinear, weight-normalized,
/// holes and out-of-frame targets dropped to zero).
FlowField forward_warp_flow(const FlowField& flow);

/// Mean over pixels of |du| + |dv|. Throws ShapeMismatch.
double prediction_loss(const FlowField& pred, const FlowField& gt);

template <typename T>
struct PredictionVars {
  Var<T> coarse;  // 1/8 flow
  Var<T> full;
  Var<T> f_am;
};

/// Convs(f_c, f_am, f_p) head on a tape. The read-out uses a zero motion
/// feature, so f_am comes from memory attention alone.
template <typename T>
PredictionVars<T> predict_flow(Tape<T>& tape, const Config& cfg, Var<T> context, const MemoryBuffer<T>& buffer,
                               const Mat<T>& prev_flow_coarse);

struct Prediction {
  FlowField full;
  FlowField coarse;  // padded 1/8 grid
};

struct PredictorState {
  MemoryBuffer<float> buffer;
  std::optional<FlowField> prev_flow;       // f_{t-1 -> t} on the padded 1/8 grid
  std::optional<FlowField> prev_flow_full;  // the same flow at input resolution
  EstimatorState estimator;
  int frame_index = 0;
};

/// Predicts f_{t -> t+1} from I_t and memory only. Throws ColdStart before
/// the first observe().
Prediction predict(const PredictorState& state, const ImageFrame& frame_t, const EncoderParams& params,
                   const Config& cfg);
FlowField predict_flow(const PredictorState& state, const ImageFrame& frame_t, const EncoderParams& params,
                       const Config& cfg);

/// Consumes the pair (I_t, I_t1): estimates its flow, writes the motion
/// feature into the predictor memory and stores the flow for warping. With
/// `self_loop`, motion features are built from that prediction instead of
/// the estimator's flow.
PredictorState observe(const PredictorState& state, const ImageFrame& frame_t, const ImageFrame& frame_t1,
                       const EncoderParams& params, const Config& cfg, const Prediction* self_loop = nullptr);

}  // namespace memflow
