#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "diffpad/autoencoder.hpp"
#include "diffpad/pad.hpp"
#include "diffpad/synth.hpp"
#include "diffpad/train.hpp"
#include "diffpad/unet.hpp"

namespace diffpad {

inline constexpr std::string_view kToolVersion = "0.1.0";

struct ModelSection {
  std::string kind = "diffusion";  // diffusion, cae, vae
  NetConfig net;
  int steps = 100;
  double beta_start = 1e-3;
  double beta_end = 0.2;
  int truncation = 0;  // 0: ceil(T / 4)
  int latent_dim = 64;

  int effective_truncation() const { return truncation > 0 ? truncation : default_truncation(steps); }
  AutoencoderConfig autoencoder() const;
};

struct PipelineSection {
  Metric metric = Metric::kLpips;
  int roi_height = 0;  // 0: model image size
  int roi_width = 0;
  int restarts = 1;
  std::string features = "fixed_random";  // or a checkpoint path
  std::uint64_t feature_seed = 7;
};

struct EvalSection {
  double target_apcer = 10.0;
  bool pooled = false;
};

struct DataSection {
  std::string manifest;  // train default when --manifest is absent; relative to the config file
  double train_fraction = 0.83;
  SynthConfig synth;  // shape and seed come from the model and run sections
};

/// Everything a run needs. Component seeds derive from `seed`.
struct RunConfig {
  std::uint64_t seed = 0;
  int jobs = 1;
  bool deterministic = false;
  ModelSection model;
  TrainConfig train;
  PipelineSection pipeline;
  EvalSection eval;
  DataSection data;

  std::uint64_t synth_seed() const { return derive_seed(seed, 1); }
  std::uint64_t init_seed() const { return derive_seed(seed, 2); }
  std::uint64_t train_seed() const { return derive_seed(seed, 3); }
  std::uint64_t split_seed() const { return derive_seed(seed, 4); }
  std::uint64_t score_seed() const { return derive_seed(seed, 5); }

  NoiseSchedule schedule() const;
  SynthConfig synth_config() const;
  void validate() const;  // InvalidConfig
};

// INI text with sections [run] [model] [train] [pipeline] [eval] [data].
// Unknown sections or keys are rejected. Throws InvalidConfig.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical INI listing every key; parse_config(format_config(c)) == c.
std::string format_config(const RunConfig& c);

// SHA-256 of format_config(c) with run-local fields (jobs) excluded.
std::string config_digest(const RunConfig& c);

}  // namespace diffpad
