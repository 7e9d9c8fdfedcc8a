#pragma once

// Model container: "PADCKPT\0", u32 format version, u64 header length, a
// JSON header, then every array as little-endian float32. The header lists
// each array's name, shape and byte offset into the payload. Optimizer
// moments travel as arrays named "adam.m/<param>" and "adam.v/<param>".

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "diffpad/diffusion.hpp"
#include "diffpad/params.hpp"
#include "diffpad/train.hpp"
#include "diffpad/unet.hpp"

namespace diffpad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;  // diffusion, cae, vae or features
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
  int epoch = 0;
  ParamStore params;
  std::optional<AdamState> optimizer;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);  // BadCheckpoint

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);  // IoError, BadCheckpoint

nlohmann::json to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const nlohmann::json& j);

struct DiffusionModel {
  DenoiserNetwork net;
  NoiseSchedule schedule;
  int truncation = 0;  // restoration step N
  int epoch = 0;
  std::optional<AdamState> optimizer;
  nlohmann::json meta = nlohmann::json::object();
};

Checkpoint to_checkpoint(const DiffusionModel& model);
DiffusionModel diffusion_from_checkpoint(const Checkpoint& ckpt);  // BadCheckpoint

// Throws BadCheckpoint when `ckpt.kind` differs from `kind`.
void require_kind(const Checkpoint& ckpt, std::string_view kind);

}  // namespace diffpad
