#pragma once

#include "memflow/autograd.hpp"

#include <map>
#include <string>

namespace memflow {

/// One-cycle learning rate with linear warm-up from max_lr/25 over
/// pct_start of the run, then linear annealing to max_lr/25/1e4.
double one_cycle_lr(double max_lr, long step, long total_steps, double pct_start);

/// Scales gradients in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::map<std::string, Mat<float>>& grads, double max_norm);

/// Adam with decoupled weight decay. Moments are created lazily per name.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  AdamW() = default;
  explicit AdamW(Options options) : options_(options) {}

  void step(ParamSet<float>& params, const std::map<std::string, Mat<float>>& grads, double lr);

  long steps() const { return steps_; }
  void set_steps(long s) { steps_ = s; }
  ParamSet<float>& first_moment() { return m_; }
  ParamSet<float>& second_moment() { return v_; }
  const ParamSet<float>& first_moment() const { return m_; }
  const ParamSet<float>& second_moment() const { return v_; }

 private:
  Options options_;
  long steps_ = 0;
  ParamSet<float> m_;
  ParamSet<float> v_;
};

}  // namespace memflow
