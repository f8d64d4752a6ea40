#pragma once

#include "memflow/metrics.hpp"
#include "memflow/predictor.hpp"
#include "memflow/synth.hpp"

#include <functional>

namespace memflow {

struct FlowEvaluation {
  EvalReport report;                     // final iterate
  std::vector<double> epe_per_iteration;  // pooled EPE of iterate k = 1..N
};

/// Online estimation over every clip (memory reset per clip) with the
/// iteration count, l_max, re-scaling and warm-start of `cfg`.
FlowEvaluation evaluate_flow(const EncoderParams& params, const Config& cfg, const std::vector<Clip>& clips,
                             int workers = 1);

struct PredictionEvaluation {
  EvalReport prediction;       // predicted f_{t -> t+1}, t >= 1
  EvalReport warped_estimate;  // forward-warped estimated f_{t-1 -> t}
  EvalReport warped_oracle;    // forward-warped ground-truth f_{t-1 -> t}
};

PredictionEvaluation evaluate_prediction(const EncoderParams& params, const Config& cfg,
                                         const std::vector<Clip>& clips, bool self_loop = false, int workers = 1);

/// Runs fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

}  // namespace memflow
