#pragma once

#include "memflow/model.hpp"
#include "memflow/optim.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>

namespace memflow {

nlohmann::json config_to_json(const Config& cfg);
/// Overlays the keys present in `j` on `base`; unknown keys throw InvalidConfig.
Config config_from_json(const nlohmann::json& j, Config base = {});

/// Container layout:
///   8 bytes   magic "MEMFLOW\0"
///   uint32    format version
///   uint64    manifest length n
///   n bytes   JSON manifest {format_version, config, meta, tensors: [{name, shape, dtype, offset}]}
///   payload   float32 little-endian tensors, row-major, at the listed byte offsets
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  nlohmann::json meta = nlohmann::json::object();
  std::optional<AdamW> optimizer;  // present when saved mid-training
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& meta = {},
                     const AdamW* optimizer = nullptr);
/// Throws BadMagic, TruncatedFile, IoFailure.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace memflow
