#include "memflow/synth.hpp"

#include "memflow/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>

namespace memflow {

namespace {

using Vec2 = std::array<double, 2>;

constexpr int kTextureComponents = 6;

Texture random_texture(double min_wavelength, double max_wavelength, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Texture tex;
  for (auto& b : tex.base) b = static_cast<float>(0.2 + 0.6 * unit(rng));
  for (int i = 0; i < kTextureComponents; ++i) {
    const double wavelength = min_wavelength * std::pow(max_wavelength / min_wavelength, unit(rng));
    const double dir = 2.0 * std::numbers::pi * unit(rng);
    const double k = 2.0 * std::numbers::pi / wavelength;
    tex.frequency.push_back({static_cast<float>(k * std::cos(dir)), static_cast<float>(k * std::sin(dir))});
    tex.phase.push_back(static_cast<float>(2.0 * std::numbers::pi * unit(rng)));
    const double lum = 0.06 + 0.06 * unit(rng);
    std::array<float, 3> amp{};
    for (auto& a : amp) a = static_cast<float>(lum * (0.7 + 0.6 * unit(rng)));
    if (unit(rng) < 0.5)
      for (auto& a : amp) a = -a;
    tex.amplitude.push_back(amp);
  }
  return tex;
}

Vec2 random_direction(std::mt19937_64& rng, double magnitude) {
  const double dir = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  return {magnitude * std::cos(dir), magnitude * std::sin(dir)};
}

MotionSpec sample_motion(const GeneratorSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  MotionSpec m;
  m.background = random_texture(spec.min_wavelength, spec.max_wavelength, rng);
  m.background_velocity = spec.background_velocity.value_or(random_direction(rng, spec.background_speed * unit(rng)));
  for (int s = 0; s < spec.sprites; ++s) {
    SpriteMotion sp;
    sp.shape = unit(rng) < 0.5 ? SpriteShape::Disc : SpriteShape::Square;
    sp.size = spec.min_size + (spec.max_size - spec.min_size) * unit(rng);
    sp.position = {sp.size + (spec.width - 2.0 * sp.size) * unit(rng),
                   sp.size + (spec.height - 2.0 * sp.size) * unit(rng)};
    sp.angle = 2.0 * std::numbers::pi * unit(rng);
    sp.texture = random_texture(spec.sprite_min_wavelength, spec.sprite_max_wavelength, rng);
    switch (spec.family) {
      case MotionFamily::Velocity:
        sp.velocity = random_direction(rng, spec.max_speed * unit(rng));
        break;
      case MotionFamily::Accel: {
        sp.velocity = random_direction(rng, 0.5 * spec.max_speed * unit(rng));
        const Vec2 jitter = random_direction(rng, spec.accel_jitter * unit(rng));
        sp.acceleration = {jitter[0], spec.gravity + jitter[1]};
        break;
      }
      case MotionFamily::Rotation: {
        sp.velocity = random_direction(rng, 0.5 * spec.max_speed * unit(rng));
        const double w = spec.max_angular_velocity * (0.3 + 0.7 * unit(rng));
        sp.angular_velocity = unit(rng) < 0.5 ? -w : w;
        break;
      }
    }
    m.sprites.push_back(std::move(sp));
  }
  return m;
}

/// Index of the front-most sprite covering point p at time t, -1 for background.
int layer_at(const MotionSpec& m, double x, double y, double t) {
  for (int s = static_cast<int>(m.sprites.size()) - 1; s >= 0; --s)
    if (m.sprites[s].signed_distance(m.sprites[s].to_local(x, y, t)) < 0.0) return s;
  return -1;
}

std::string frame_name(int t) { return "frame_" + std::to_string(t) + ".png"; }
std::string flow_name(int t) { return "flow_" + std::to_string(t) + ".flo"; }

std::string sample_dir(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%05d", index);
  return buf;
}

}  // namespace

const char* to_string(MotionFamily family) {
  switch (family) {
    case MotionFamily::Velocity: return "velocity";
    case MotionFamily::Accel: return "accel";
    case MotionFamily::Rotation: return "rotation";
  }
  return "unknown";
}

MotionFamily parse_motion_family(const std::string& name) {
  if (name == "velocity") return MotionFamily::Velocity;
  if (name == "accel") return MotionFamily::Accel;
  if (name == "rotation") return MotionFamily::Rotation;
  throw Error(ErrorCode::InvalidSpec, "unknown motion family '" + name + "'");
}

std::array<float, 3> Texture::at(double x, double y) const {
  std::array<float, 3> c = base;
  for (std::size_t i = 0; i < frequency.size(); ++i) {
    const float s = static_cast<float>(std::sin(frequency[i][0] * x + frequency[i][1] * y + phase[i]));
    for (int k = 0; k < 3; ++k) c[k] += amplitude[i][k] * s;
  }
  for (auto& v : c) v = std::clamp(v, 0.0f, 1.0f);
  return c;
}

std::array<double, 2> SpriteMotion::center(double t) const {
  return {position[0] + velocity[0] * t + 0.5 * acceleration[0] * t * t,
          position[1] + velocity[1] * t + 0.5 * acceleration[1] * t * t};
}

std::array<double, 2> SpriteMotion::to_local(double x, double y, double t) const {
  const Vec2 c = center(t);
  const double th = orientation(t);
  const double dx = x - c[0], dy = y - c[1];
  return {std::cos(th) * dx + std::sin(th) * dy, -std::sin(th) * dx + std::cos(th) * dy};
}

std::array<double, 2> SpriteMotion::to_image(const std::array<double, 2>& q, double t) const {
  const Vec2 c = center(t);
  const double th = orientation(t);
  return {c[0] + std::cos(th) * q[0] - std::sin(th) * q[1], c[1] + std::sin(th) * q[0] + std::cos(th) * q[1]};
}

double SpriteMotion::signed_distance(const std::array<double, 2>& q) const {
  if (shape == SpriteShape::Disc) return std::hypot(q[0], q[1]) - size;
  const double dx = std::abs(q[0]) - size, dy = std::abs(q[1]) - size;
  return std::hypot(std::max(dx, 0.0), std::max(dy, 0.0)) + std::min(std::max(dx, dy), 0.0);
}

std::array<double, 2> MotionSpec::background_offset(double t) const {
  return {background_velocity[0] * t + 0.5 * background_acceleration[0] * t * t,
          background_velocity[1] * t + 0.5 * background_acceleration[1] * t * t};
}

void GeneratorSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidSpec, msg); };
  if (frames < 2) fail("at least two frames are required");
  if (height <= 0 || width <= 0 || height % 8 != 0 || width % 8 != 0) fail("resolution must be a positive multiple of 8");
  if (sprites < 0) fail("sprite count must be non-negative");
  if (!(min_size > 0.0) || max_size < min_size) fail("sprite size range is invalid");
  if (2.0 * max_size >= std::min(height, width)) fail("sprites do not fit the frame");
  if (!(min_wavelength > 2.0) || max_wavelength < min_wavelength) fail("texture wavelength band is invalid");
  if (!(sprite_min_wavelength > 2.0) || sprite_max_wavelength < sprite_min_wavelength)
    fail("sprite texture wavelength band is invalid");
  if (max_speed < 0.0 || background_speed < 0.0 || accel_jitter < 0.0 || max_angular_velocity < 0.0)
    fail("motion magnitudes must be non-negative");
}

VideoSample render(const GeneratorSpec& spec, const MotionSpec& motion) {
  spec.validate();
  const int H = spec.height, W = spec.width, T = spec.frames;
  VideoSample out;
  out.motion_spec = motion;
  for (int t = 0; t < T; ++t) {
    ImageFrame img(H, W);
    const Vec2 b = motion.background_offset(t);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        std::array<float, 3> c = motion.background.at(x - b[0], y - b[1]);
        for (const auto& sp : motion.sprites) {
          const Vec2 q = sp.to_local(x, y, t);
          const float alpha = static_cast<float>(std::clamp(0.5 - sp.signed_distance(q), 0.0, 1.0));
          if (alpha <= 0.0f) continue;
          const auto s = sp.texture.at(q[0], q[1]);
          for (int k = 0; k < 3; ++k) c[k] = alpha * s[k] + (1.0f - alpha) * c[k];
        }
        for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
      }
    out.frames.push_back(std::move(img));
  }
  for (int t = 0; t + 1 < T; ++t) {
    FlowField f = FlowField::zeros(H, W);
    MaskGrid occ = MaskGrid::Constant(H, W, false);
    MaskGrid edge = MaskGrid::Constant(H, W, false);
    const Vec2 b0 = motion.background_offset(t), b1 = motion.background_offset(t + 1);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int layer = layer_at(motion, x, y, t);
        Vec2 target{x + b1[0] - b0[0], y + b1[1] - b0[1]};
        if (layer >= 0) {
          const auto& sp = motion.sprites[layer];
          target = sp.to_image(sp.to_local(x, y, t), t + 1);
        }
        f.u(y, x) = static_cast<float>(target[0] - x);
        f.v(y, x) = static_cast<float>(target[1] - y);
        occ(y, x) = layer_at(motion, target[0], target[1], t + 1) > layer;
        for (const auto& sp : motion.sprites)
          if (std::abs(sp.signed_distance(sp.to_local(x, y, t))) < 1.0) edge(y, x) = true;
      }
    out.flows.push_back(std::move(f));
    out.occlusion.push_back(std::move(occ));
    out.boundary.push_back(std::move(edge));
  }
  return out;
}

VideoSample generate(const GeneratorSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  return render(spec, sample_motion(spec, rng));
}

Manifest make_dataset(const GeneratorSpec& spec, int count, const std::filesystem::path& out_dir,
                      std::uint64_t seed, int workers) {
  spec.validate();
  if (count < 0) throw Error(ErrorCode::InvalidSpec, "count must be non-negative");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

  Manifest manifest;
  manifest.path = out_dir / "manifest.jsonl";
  std::mt19937_64 seeder(seed);
  for (int i = 0; i < count; ++i) {
    ManifestRecord r;
    r.index = i;
    r.seed = seeder();
    r.frames = spec.frames;
    r.height = spec.height;
    r.width = spec.width;
    r.family = to_string(spec.family);
    for (int t = 0; t < spec.frames; ++t) r.frame_paths.push_back(sample_dir(i) + "/" + frame_name(t));
    for (int t = 0; t + 1 < spec.frames; ++t) r.flow_paths.push_back(sample_dir(i) + "/" + flow_name(t));
    manifest.records.push_back(std::move(r));
  }

  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        const ManifestRecord& r = manifest.records[i];
        const VideoSample s = generate(spec, r.seed);
        std::filesystem::create_directories(out_dir / sample_dir(i));
        for (int t = 0; t < spec.frames; ++t) write_png(s.frames[t], out_dir / r.frame_paths[t]);
        for (int t = 0; t + 1 < spec.frames; ++t) write_flo(s.flows[t], out_dir / r.flow_paths[t]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < std::max(1, workers); ++w) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  std::ofstream os(manifest.path);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + manifest.path.string());
  for (const auto& r : manifest.records) {
    nlohmann::json j{{"index", r.index},   {"seed", r.seed},     {"frames", r.frames},
                     {"height", r.height}, {"width", r.width},   {"family", r.family},
                     {"frame_paths", r.frame_paths}, {"flow_paths", r.flow_paths}};
    os << j.dump() << '\n';
  }
  if (!os) throw Error(ErrorCode::IoFailure, "failed writing " + manifest.path.string());
  return manifest;
}

Manifest read_manifest(const std::filesystem::path& path) {
  Manifest m;
  m.path = std::filesystem::is_directory(path) ? path / "manifest.jsonl" : path;
  std::ifstream is(m.path);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot open manifest " + m.path.string());
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.index = j.at("index");
      r.seed = j.at("seed");
      r.frames = j.at("frames");
      r.height = j.at("height");
      r.width = j.at("width");
      r.family = j.at("family");
      r.frame_paths = j.at("frame_paths").get<std::vector<std::string>>();
      r.flow_paths = j.at("flow_paths").get<std::vector<std::string>>();
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::IoFailure, "malformed manifest record in " + m.path.string() + ": " + e.what());
    }
  }
  return m;
}

Clip load_clip(const Manifest& manifest, const ManifestRecord& record) {
  const auto dir = manifest.path.parent_path();
  Clip c;
  for (const auto& p : record.frame_paths) c.frames.push_back(read_png(dir / p));
  for (const auto& p : record.flow_paths) c.flows.push_back(read_flo(dir / p));
  return c;
}

std::vector<Clip> load_clips(const Manifest& manifest) {
  std::vector<Clip> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) out.push_back(load_clip(manifest, r));
  return out;
}

}  // namespace memflow
