#pragma once

#include <exception>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffpad/checkpoint.hpp"
#include "diffpad/config.hpp"
#include "diffpad/eval.hpp"
#include "diffpad/pad.hpp"
#include "diffpad/similarity.hpp"

namespace diffpad {

enum class ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kNumerical = 4 };

ExitCode exit_code_for(const std::exception& e);

// Progress lines go here (stderr by default, nullptr silences them).
void set_progress_stream(std::ostream* out);

// {tool_version, config_digest, seeds} stamped into every artifact.
nlohmann::json artifact_stamp(const RunConfig& cfg);

/// A checkpoint loaded for scoring, with its reconstructor.
class LoadedModel {
 public:
  LoadedModel(const LoadedModel&) = delete;
  LoadedModel& operator=(const LoadedModel&) = delete;

  static std::unique_ptr<LoadedModel> load(const RunConfig& cfg, const std::filesystem::path& ckpt);

  const Checkpoint& checkpoint() const { return ckpt_; }
  const std::string& checkpoint_id() const { return id_; }
  const Reconstructor& reconstructor() const { return *rec_; }
  int truncation() const { return truncation_; }

 private:
  LoadedModel() = default;

  Checkpoint ckpt_;
  std::string id_;
  std::optional<DiffusionModel> diffusion_;
  std::optional<AutoencoderNetwork> ae_;
  std::unique_ptr<Reconstructor> rec_;
  int truncation_ = 0;
};

// Feature extractor named by cfg.pipeline.features: "fixed_random",
// "trained" (the encoder of `ckpt`, a diffusion checkpoint) or a path.
FeatureExtractor pipeline_features(const RunConfig& cfg, const Checkpoint* ckpt);

// Writes images/, manifest.csv, train.csv and test.csv. Returns manifest.csv.
std::filesystem::path cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir);

// Trains on the bona fide entries of `manifest`.
std::filesystem::path cmd_train(const RunConfig& cfg, const std::filesystem::path& manifest,
                                const std::filesystem::path& out_checkpoint);

std::filesystem::path cmd_score(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                const std::filesystem::path& manifest,
                                const std::filesystem::path& out_csv);

struct EvalOutputs {
  std::filesystem::path text_path;
  std::filesystem::path json_path;
  EvalReport report;
};

// One dataset per scores file, named after the file stem. Writes
// <out_prefix>.txt and <out_prefix>.json.
EvalOutputs cmd_eval(const RunConfig& cfg, const std::vector<std::filesystem::path>& scores_csvs,
                     const std::filesystem::path& out_prefix);

// FID between originals and reconstructions per group: bona fide and each
// PAI. Groups with fewer than two images are skipped. Optional JSON output.
std::map<std::string, double> cmd_fid(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                      const std::filesystem::path& manifest,
                                      const std::filesystem::path& out_json = {});

std::filesystem::path cmd_reconstruct(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                      const std::filesystem::path& image_in,
                                      const std::filesystem::path& image_out);

}  // namespace diffpad
