#pragma once

#include "memflow/encoders.hpp"

#include <cstdint>

namespace memflow {

/// A configuration together with every learnable tensor it implies.
struct Model {
  Config config;
  EncoderParams params;
};

/// Estimator and predictor parameters, deterministic in `seed`.
Model init_model(const Config& cfg, std::uint64_t seed);

/// Multiple of the input size every frame is padded to: 8 * 2^(levels-1).
int padding_multiple(const Config& cfg);

/// Replicate-pads to a multiple of `multiple` on the bottom/right.
ImageFrame pad_frame(const ImageFrame& frame, int multiple);
FlowField crop_flow(const FlowField& flow, int height, int width);

}  // namespace memflow
