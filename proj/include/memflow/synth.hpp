#pragma once

#include "memflow/types.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace memflow {

enum class MotionFamily { Velocity, Accel, Rotation };

const char* to_string(MotionFamily family);
/// Throws InvalidSpec for an unknown name.
MotionFamily parse_motion_family(const std::string& name);

enum class SpriteShape { Disc, Square };

/// Sum of sinusoids (band set by the generator spec), evaluated in the
/// owner's local frame.
struct Texture {
  std::array<float, 3> base{};
  std::vector<std::array<float, 2>> frequency;   // rad/px
  std::vector<float> phase;
  std::vector<std::array<float, 3>> amplitude;

  std::array<float, 3> at(double x, double y) const;
};

/// Center follows c0 + v t + a t^2 / 2; orientation theta0 + omega t.
struct SpriteMotion {
  SpriteShape shape = SpriteShape::Disc;
  double size = 10.0;  // radius or half side
  std::array<double, 2> position{};
  std::array<double, 2> velocity{};
  std::array<double, 2> acceleration{};
  double angle = 0.0;
  double angular_velocity = 0.0;
  Texture texture;

  std::array<double, 2> center(double t) const;
  double orientation(double t) const { return angle + angular_velocity * t; }
  /// Image point at time t to sprite-local coordinates, and back.
  std::array<double, 2> to_local(double x, double y, double t) const;
  std::array<double, 2> to_image(const std::array<double, 2>& q, double t) const;
  /// Negative inside.
  double signed_distance(const std::array<double, 2>& q) const;
};

/// Background translates by b(t) = v t + a t^2 / 2. Sprites are listed back
/// to front.
struct MotionSpec {
  std::array<double, 2> background_velocity{};
  std::array<double, 2> background_acceleration{};
  Texture background;
  std::vector<SpriteMotion> sprites;

  std::array<double, 2> background_offset(double t) const;
};

struct GeneratorSpec {
  int height = 64;
  int width = 64;
  int frames = 3;
  int sprites = 3;
  MotionFamily family = MotionFamily::Velocity;
  double min_size = 8.0;
  double max_size = 16.0;
  double max_speed = 6.0;            // sprite px / frame
  double background_speed = 2.0;     // background px / frame
  std::optional<std::array<double, 2>> background_velocity;
  double gravity = 1.0;              // accel family, px / frame^2 along +y
  double accel_jitter = 0.3;
  double max_angular_velocity = 0.08;
  double min_wavelength = 16.0;      // background texture band, px, log-uniform
  double max_wavelength = 48.0;
  double sprite_min_wavelength = 6.0;  // sprite band
  double sprite_max_wavelength = 16.0;

  /// Throws InvalidSpec.
  void validate() const;
};

struct VideoSample {
  std::vector<ImageFrame> frames;
  std::vector<FlowField> flows;      // flows[t]: frame t -> t+1
  std::vector<MaskGrid> occlusion;   // target covered by a nearer sprite at t+1
  std::vector<MaskGrid> boundary;    // anti-aliased edge band of a sprite
  MotionSpec motion_spec;
};

/// Renders `motion` analytically at the resolution and length of `spec`.
VideoSample render(const GeneratorSpec& spec, const MotionSpec& motion);
/// Samples a motion spec for spec.family and renders it. Deterministic in seed.
VideoSample generate(const GeneratorSpec& spec, std::uint64_t seed);

struct ManifestRecord {
  int index = 0;
  std::uint64_t seed = 0;
  int frames = 0;
  int height = 0;
  int width = 0;
  std::string family;
  std::vector<std::string> frame_paths;  // relative to the manifest directory
  std::vector<std::string> flow_paths;
};

struct Manifest {
  std::filesystem::path path;
  std::vector<ManifestRecord> records;
};

/// Writes sample_%05d/frame_%d.png and flow_%d.flo plus manifest.jsonl.
/// Per-sample seeds derive from `seed`; `workers` threads render in parallel.
Manifest make_dataset(const GeneratorSpec& spec, int count, const std::filesystem::path& out_dir,
                      std::uint64_t seed, int workers = 1);

/// Accepts the manifest file or its directory. Throws IoFailure.
Manifest read_manifest(const std::filesystem::path& path);

struct Clip {
  std::vector<ImageFrame> frames;
  std::vector<FlowField> flows;
};

Clip load_clip(const Manifest& manifest, const ManifestRecord& record);
std::vector<Clip> load_clips(const Manifest& manifest);

}  // namespace memflow
