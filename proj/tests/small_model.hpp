#pragma once

#include "memflow/model.hpp"
#include "memflow/synth.hpp"

namespace support {

/// 32x32 frames, a 4x4 feature grid and two pyramid levels.
inline memflow::Config small_config() {
  memflow::Config c;
  c.feature_dim = 16;
  c.key_dim = 8;
  c.value_dim = 16;
  c.pyramid_levels = 2;
  c.lookup_radius = 2;
  c.encoder_widths = {8, 12, 16};
  c.n_avg = 1.5 * 16;
  c.iters_train = 3;
  c.iters_infer = 4;
  return c;
}

inline memflow::GeneratorSpec small_spec(int frames = 4, memflow::MotionFamily family = memflow::MotionFamily::Velocity) {
  memflow::GeneratorSpec s;
  s.height = 32;
  s.width = 32;
  s.frames = frames;
  s.sprites = 1;
  s.min_size = 5;
  s.max_size = 8;
  s.max_speed = 3;
  s.family = family;
  return s;
}

}  // namespace support
