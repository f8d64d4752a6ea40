#include "memflow/model.hpp"

#include "memflow/estimator.hpp"
#include "memflow/memory.hpp"
#include "memflow/predictor.hpp"

#include <algorithm>
#include <random>

namespace memflow {

Model init_model(const Config& cfg, std::uint64_t seed) {
  cfg.validate();
  Model model{cfg, {}};
  std::mt19937_64 rng(seed);
  auto& p = model.params;
  init_encoder(p, "fnet", cfg, cfg.feature_dim, true, rng);
  init_encoder(p, "cnet", cfg, cfg.context_dim() + cfg.hidden_dim(), false, rng);
  init_motion_encoder(p, cfg, rng);
  init_update_block(p, cfg, rng);
  init_upsampler(p, "up", cfg.hidden_dim(), rng);
  ProjectionParams<float>::init(cfg.context_dim(), cfg.key_dim, cfg.value_dim, cfg.value_dim, rng).store(p, "mem");
  init_predictor(p, cfg, rng);
  return model;
}

int padding_multiple(const Config& cfg) { return 8 << (cfg.pyramid_levels - 1); }

ImageFrame pad_frame(const ImageFrame& frame, int multiple) {
  const int h = (frame.height + multiple - 1) / multiple * multiple;
  const int w = (frame.width + multiple - 1) / multiple * multiple;
  if (h == frame.height && w == frame.width) return frame;
  ImageFrame out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.pixels.row(static_cast<Eigen::Index>(y) * w + x) =
          frame.pixels.row(static_cast<Eigen::Index>(std::min(y, frame.height - 1)) * frame.width +
                           std::min(x, frame.width - 1));
  return out;
}

FlowField crop_flow(const FlowField& flow, int height, int width) {
  if (flow.height() == height && flow.width() == width) return flow;
  return FlowField(flow.u.topLeftCorner(height, width), flow.v.topLeftCorner(height, width));
}

}  // namespace memflow
