#include "memflow/train.hpp"

#include "memflow/evaluate.hpp"
#include "memflow/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace memflow {

namespace {

struct ClipGraph {
  std::vector<Var<float>> features;
  std::vector<Var<float>> context;
  std::vector<Var<float>> hidden;
};

ClipGraph encode_clip(Tape<float>& tape, const Config& cfg, const std::vector<ImageFrame>& padded) {
  ClipGraph g;
  for (std::size_t t = 0; t < padded.size(); ++t) {
    Var<float> img = image_input(tape, padded[t]);
    g.features.push_back(feature_encoder(tape, img));
    if (t + 1 < padded.size()) {
      auto [c, h] = context_encoder(tape, img, cfg.context_dim());
      g.context.push_back(c);
      g.hidden.push_back(h);
    }
  }
  return g;
}

Mat<float> padded_gt(const FlowField& gt, int h, int w) {
  if (gt.height() == h && gt.width() == w) return gt.as_matrix<float>();
  throw Error(ErrorCode::ShapeMismatch, "training frames must already be a multiple of the padding size");
}

void check_finite(double loss, const std::map<std::string, Mat<float>>& grads, long step) {
  if (!std::isfinite(loss))
    throw Error(ErrorCode::DivergenceDetected, "loss is " + std::to_string(loss) + " at step " + std::to_string(step));
  for (const auto& [name, g] : grads)
    if (!g.allFinite())
      throw Error(ErrorCode::DivergenceDetected,
                  "non-finite gradient for " + name + " at step " + std::to_string(step));
}

/// Clip index for (step, slot): a fresh permutation per epoch, so a resumed
/// run sees the same data as an uninterrupted one.
int clip_index(long step, int slot, int batch, int count, std::uint64_t seed) {
  const long draw = step * batch + slot;
  const long epoch = draw / count;
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order[draw % count];
}

}  // namespace

LossAndGrads flow_loss_and_grads(const Model& model, const Clip& clip) {
  const Config& cfg = model.config;
  if (clip.frames.size() < 2) throw Error(ErrorCode::TooFewFrames, "training clips need two frames");
  if (clip.flows.size() + 1 != clip.frames.size()) throw Error(ErrorCode::LengthMismatch, "one flow per pair required");
  Tape<float> tape(&model.params, true);
  const int m = padding_multiple(cfg);
  std::vector<ImageFrame> padded;
  for (const auto& f : clip.frames) {
    if (f.height % m != 0 || f.width % m != 0)
      throw Error(ErrorCode::IndivisibleResolution, "training frames must be a multiple of " + std::to_string(m));
    padded.push_back(f);
  }
  ClipGraph g = encode_clip(tape, cfg, padded);
  const ProjectionVars<float> proj = ProjectionVars<float>::bind(tape, "mem");
  MemoryBuffer<float> buffer;
  Var<float> total;
  const int pairs = static_cast<int>(clip.flows.size());
  for (int t = 0; t < pairs; ++t) {
    FrameVars<float> first{g.features[t], g.context[t], g.hidden[t]};
    PairTrace<float> trace = estimate_pair(tape, cfg, first, g.features[t + 1], buffer, cfg.iters_train,
                                                   static_cast<const Mat<float>*>(nullptr), true);
    const Var<float>& last = trace.flows_full.back();
    Var<float> loss = sequence_loss(trace.flows_full, padded_gt(clip.flows[t], last.h(), last.w()),
                                    static_cast<float>(cfg.gamma));
    total = total.valid() ? ops::add(total, loss) : loss;
    if (t + 1 < pairs)
      buffer = update(buffer, trace.context, trace.motion, proj, t, cfg.l_max, !cfg.detach_memory);
  }
  total = ops::scale(total, 1.0f / static_cast<float>(pairs));
  LossAndGrads out;
  out.loss = total.value()(0, 0);
  tape.backward(total);
  out.grads = tape.param_grads();
  return out;
}

PredictorInputs predictor_inputs(const Model& model, const Clip& clip) {
  PredictorInputs in;
  EstimatorState state;
  for (std::size_t t = 0; t + 1 < clip.frames.size(); ++t) {
    PairEstimate est = estimate_pair(state, clip.frames[t], clip.frames[t + 1], model.params, model.config);
    in.coarse.push_back(est.coarse);
    in.motion.push_back(est.motion);
    in.context.push_back(est.context);
    state = std::move(est.state);
  }
  return in;
}

LossAndGrads prediction_loss_and_grads(const Model& model, const Clip& clip, const PredictorInputs& in) {
  const Config& cfg = model.config;
  const int pairs = static_cast<int>(clip.flows.size());
  if (pairs < 2) throw Error(ErrorCode::TooFewFrames, "prediction training needs clips of at least three frames");
  if (static_cast<int>(in.coarse.size()) != pairs) throw Error(ErrorCode::LengthMismatch, "inputs do not match clip");
  Tape<float> tape(&model.params, true);
  const ProjectionVars<float> proj = ProjectionVars<float>::bind(tape, "pred.mem");
  MemoryBuffer<float> buffer;
  Var<float> total;
  for (int t = 1; t < pairs; ++t) {
    const auto& prev = in.context[t - 1];
    buffer = update(buffer, tape.constant(prev.data, prev.height, prev.width),
                    tape.constant(in.motion[t - 1].data, prev.height, prev.width), proj, t - 1, cfg.l_max,
                    !cfg.detach_memory);
    const auto& ctx = in.context[t];
    PredictionVars<float> p = predict_flow(tape, cfg, tape.constant(ctx.data, ctx.height, ctx.width), buffer,
                                           in.coarse[t - 1].as_matrix<float>());
    Var<float> loss = ops::l1_mean(p.full, padded_gt(clip.flows[t], p.full.h(), p.full.w()));
    total = total.valid() ? ops::add(total, loss) : loss;
  }
  total = ops::scale(total, 1.0f / static_cast<float>(pairs - 1));
  LossAndGrads out;
  out.loss = total.value()(0, 0);
  tape.backward(total);
  for (auto& [name, g] : tape.param_grads())
    if (name.rfind("pred.", 0) == 0) out.grads.emplace(name, std::move(g));
  return out;
}

double validation_epe(const Model& model, const std::vector<Clip>& val_clips, TrainTask task, int workers) {
  if (task == TrainTask::Flow) return evaluate_flow(model.params, model.config, val_clips, workers).report.epe();
  return evaluate_prediction(model.params, model.config, val_clips, false, workers).prediction.epe();
}

TrainResult train(Model model, const std::vector<Clip>& train_clips, const std::vector<Clip>& val_clips,
                  const TrainOptions& options, const TrainLogger& log) {
  if (train_clips.empty()) throw Error(ErrorCode::InvalidConfig, "no training clips");
  if (options.steps < 0 || options.batch < 1) throw Error(ErrorCode::InvalidConfig, "invalid step or batch count");
  model.config.validate();

  AdamW opt(AdamW::Options{0.9, 0.999, 1e-8, options.weight_decay});
  long start = 0;
  if (options.resume) {
    Checkpoint ck = load_checkpoint(*options.resume);
    model = std::move(ck.model);
    start = ck.meta.value("step", 0L);
    if (ck.optimizer) {
      opt.set_steps(ck.optimizer->steps());
      for (const auto& [name, m] : ck.optimizer->first_moment()) opt.first_moment().add(name, m);
      for (const auto& [name, v] : ck.optimizer->second_moment()) opt.second_moment().add(name, v);
    }
  }
  const std::string task_name = options.task == TrainTask::Flow ? "flow" : "predict";
  auto emit = [&](nlohmann::json j) {
    j["task"] = task_name;
    if (log) log(j);
  };
  auto save = [&](long step) {
    if (options.checkpoint.empty()) return;
    save_checkpoint(options.checkpoint, model, {{"step", step}, {"task", task_name}, {"total_steps", options.steps}},
                    &opt);
    emit({{"event", "checkpoint"}, {"step", step}, {"path", options.checkpoint.string()}});
  };

  std::vector<std::optional<PredictorInputs>> cache(train_clips.size());
  auto inputs_for = [&](int idx) -> const PredictorInputs& {
    if (!cache[idx]) cache[idx] = predictor_inputs(model, train_clips[idx]);
    return *cache[idx];
  };

  TrainResult result;
  if (!val_clips.empty() && options.val_every > 0 && start == 0) {
    result.initial_val_epe = validation_epe(model, val_clips, options.task, options.workers);
    emit({{"event", "validation"}, {"step", 0}, {"val_epe", *result.initial_val_epe}});
  }

  const int count = static_cast<int>(train_clips.size());
  for (long step = start; step < options.steps; ++step) {
    std::map<std::string, Mat<float>> grads;
    double loss = 0.0;
    for (int b = 0; b < options.batch; ++b) {
      const int idx = clip_index(step, b, options.batch, count, model.config.seed);
      LossAndGrads lg = options.task == TrainTask::Flow
                            ? flow_loss_and_grads(model, train_clips[idx])
                            : prediction_loss_and_grads(model, train_clips[idx], inputs_for(idx));
      loss += lg.loss / options.batch;
      for (auto& [name, g] : lg.grads) {
        auto it = grads.find(name);
        if (it == grads.end()) grads.emplace(name, g / static_cast<float>(options.batch));
        else it->second += g / static_cast<float>(options.batch);
      }
    }
    check_finite(loss, grads, step);
    const double norm = clip_grad_norm(grads, options.clip);
    const double lr = one_cycle_lr(options.lr, step, options.steps, options.pct_start);
    opt.step(model.params, grads, lr);
    result.last_loss = loss;
    emit({{"event", "step"}, {"step", step}, {"loss", loss}, {"lr", lr}, {"grad_norm", norm}});

    const long done = step + 1;
    if (!val_clips.empty() && options.val_every > 0 && done % options.val_every == 0 && done < options.steps) {
      const double v = validation_epe(model, val_clips, options.task, options.workers);
      emit({{"event", "validation"}, {"step", done}, {"val_epe", v}});
    }
    if (options.checkpoint_every > 0 && done % options.checkpoint_every == 0 && done < options.steps) save(done);
  }
  result.steps = options.steps;
  if (!val_clips.empty()) {
    result.final_val_epe = validation_epe(model, val_clips, options.task, options.workers);
    emit({{"event", "validation"}, {"step", options.steps}, {"val_epe", *result.final_val_epe}});
  }
  save(options.steps);
  result.model = std::move(model);
  return result;
}

}  // namespace memflow
