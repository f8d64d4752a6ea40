#include "memflow/optim.hpp"

#include <algorithm>
#include <cmath>

namespace memflow {

double one_cycle_lr(double max_lr, long step, long total_steps, double pct_start) {
  const double initial = max_lr / 25.0;
  const double final_lr = initial / 1e4;
  const double warm = std::max(1.0, pct_start * static_cast<double>(total_steps));
  const double s = static_cast<double>(std::clamp(step, 0L, total_steps));
  if (s < warm) return initial + (max_lr - initial) * s / warm;
  const double rest = std::max(1.0, static_cast<double>(total_steps) - warm);
  return max_lr + (final_lr - max_lr) * std::min(1.0, (s - warm) / rest);
}

double clip_grad_norm(std::map<std::string, Mat<float>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += g.cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& [name, g] : grads) g *= s;
  }
  return norm;
}

void AdamW::step(ParamSet<float>& params, const std::map<std::string, Mat<float>>& grads, double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  const float b1 = static_cast<float>(options_.beta1), b2 = static_cast<float>(options_.beta2);
  for (const auto& [name, g] : grads) {
    Mat<float>& p = params.at(name);
    if (!m_.contains(name)) {
      m_.add(name, Mat<float>::Zero(p.rows(), p.cols()));
      v_.add(name, Mat<float>::Zero(p.rows(), p.cols()));
    }
    Mat<float>& m = m_.at(name);
    Mat<float>& v = v_.at(name);
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
    p *= static_cast<float>(1.0 - lr * options_.weight_decay);
    const float step_size = static_cast<float>(lr / bc1);
    const float denom_scale = static_cast<float>(1.0 / std::sqrt(bc2));
    p.array() -= step_size * m.array() / (v.array().sqrt() * denom_scale + static_cast<float>(options_.eps));
  }
}

}  // namespace memflow
