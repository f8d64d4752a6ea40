#include "memflow/evaluate.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace memflow {

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex mutex;
  auto work = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < std::min(std::max(1, workers), std::max(1, n)); ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

FlowEvaluation evaluate_flow(const EncoderParams& params, const Config& cfg, const std::vector<Clip>& clips,
                             int workers) {
  cfg.validate();
  std::vector<std::vector<std::vector<FlowField>>> results(clips.size());
  parallel_for(static_cast<int>(clips.size()), workers,
               [&](int i) { results[i] = run_video_iterates(clips[i].frames, params, cfg); });

  // Pooled in clip order so the numbers do not depend on scheduling.
  MetricAccumulator acc;
  std::vector<double> sums(cfg.iters_infer, 0.0);
  long long pixels = 0;
  for (std::size_t c = 0; c < clips.size(); ++c)
    for (std::size_t p = 0; p < results[c].size(); ++p) {
      const auto& its = results[c][p];
      const FlowField& gt = clips[c].flows.at(p);
      acc.add(its.back(), gt);
      for (std::size_t k = 0; k < its.size(); ++k)
        sums[k] += epe(its[k], gt) * gt.height() * gt.width();
      pixels += static_cast<long long>(gt.height()) * gt.width();
    }
  FlowEvaluation out;
  out.report = acc.report();
  for (double s : sums) out.epe_per_iteration.push_back(s / static_cast<double>(pixels));
  return out;
}

PredictionEvaluation evaluate_prediction(const EncoderParams& params, const Config& cfg,
                                         const std::vector<Clip>& clips, bool self_loop, int workers) {
  cfg.validate();
  struct Triple {
    std::vector<FlowField> pred, warped, oracle, gt;
  };
  std::vector<Triple> results(clips.size());
  parallel_for(static_cast<int>(clips.size()), workers, [&](int i) {
    const Clip& clip = clips[i];
    Triple& r = results[i];
    PredictorState state;
    for (std::size_t t = 0; t + 1 < clip.frames.size(); ++t) {
      std::optional<Prediction> p;
      if (t >= 1) {
        p = predict(state, clip.frames[t], params, cfg);
        r.pred.push_back(p->full);
        r.warped.push_back(forward_warp_flow(*state.prev_flow_full));
        r.oracle.push_back(forward_warp_flow(clip.flows[t - 1]));
        r.gt.push_back(clip.flows[t]);
      }
      state = observe(state, clip.frames[t], clip.frames[t + 1], params, cfg, self_loop && p ? &*p : nullptr);
    }
  });
  MetricAccumulator pred, warped, oracle;
  for (const auto& r : results)
    for (std::size_t k = 0; k < r.gt.size(); ++k) {
      pred.add(r.pred[k], r.gt[k]);
      warped.add(r.warped[k], r.gt[k]);
      oracle.add(r.oracle[k], r.gt[k]);
    }
  if (pred.pixels() == 0) throw Error(ErrorCode::TooFewFrames, "prediction needs clips of at least three frames");
  return {pred.report(), warped.report(), oracle.report()};
}

}  // namespace memflow
