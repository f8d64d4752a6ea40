#pragma once

#include "memflow/checkpoint.hpp"
#include "memflow/synth.hpp"

#include <functional>
#include <map>
#include <optional>

namespace memflow {

enum class TrainTask { Flow, Predict };

struct TrainOptions {
  TrainTask task = TrainTask::Flow;
  long steps = 2000;
  int batch = 1;                 // clips per optimizer step
  double lr = 4e-4;              // peak of the one-cycle schedule
  double weight_decay = 1e-4;
  double pct_start = 0.05;
  double clip = 1.0;
  long val_every = 500;          // 0 disables periodic validation
  long checkpoint_every = 500;   // 0 writes only the final checkpoint
  std::filesystem::path checkpoint;  // empty: nothing is written
  std::optional<std::filesystem::path> resume;
  int workers = 1;
};

struct TrainResult {
  Model model;
  long steps = 0;
  double last_loss = 0.0;
  std::optional<double> initial_val_epe;
  std::optional<double> final_val_epe;
};

/// Receives one structured record per step and per validation.
using TrainLogger = std::function<void(const nlohmann::json&)>;

struct LossAndGrads {
  double loss = 0.0;
  std::map<std::string, Mat<float>> grads;
};

/// Sequence loss of one clip, averaged over its pairs, with gradients
/// backpropagated through the memory across the clip.
LossAndGrads flow_loss_and_grads(const Model& model, const Clip& clip);

/// Estimator outputs a predictor needs for one clip, computed once with the
/// frozen estimator.
struct PredictorInputs {
  std::vector<FlowField> coarse;            // per pair, padded 1/8 grid
  std::vector<FeatureMap<float>> motion;    // per pair
  std::vector<FeatureMap<float>> context;   // per pair (its first frame)
};
PredictorInputs predictor_inputs(const Model& model, const Clip& clip);

/// L1 prediction loss for every t in [1, T-2], averaged; gradients reach only
/// "pred." parameters.
LossAndGrads prediction_loss_and_grads(const Model& model, const Clip& clip, const PredictorInputs& inputs);

/// Throws DivergenceDetected on a non-finite loss or gradient.
TrainResult train(Model model, const std::vector<Clip>& train_clips, const std::vector<Clip>& val_clips,
                  const TrainOptions& options, const TrainLogger& log = {});

/// Validation score used during training: flow EPE or prediction EPE.
double validation_epe(const Model& model, const std::vector<Clip>& val_clips, TrainTask task, int workers = 1);

}  // namespace memflow
