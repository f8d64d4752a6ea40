#pragma once

#include "memflow/types.hpp"

#include <filesystem>

namespace memflow {

/// Middlebury .flo: float32 magic 202021.25, int32 width, int32 height, then
/// interleaved (u, v) float32 per pixel in raster order, little-endian.
inline constexpr float kFloMagic = 202021.25f;

FlowField read_flo(const std::filesystem::path& path);
void write_flo(const FlowField& flow, const std::filesystem::path& path);

/// 8-bit RGB PNG; pixel values are mapped to and from [0, 1].
ImageFrame read_png(const std::filesystem::path& path);
void write_png(const ImageFrame& image, const std::filesystem::path& path);

/// Flow color wheel visualization. Hue encodes direction, saturation the
/// magnitude clipped at max_magnitude (<= 0 selects the field's maximum).
/// Zero flow is white.
ImageFrame flow_to_color(const FlowField& flow, float max_magnitude = 0.0f);

}  // namespace memflow
