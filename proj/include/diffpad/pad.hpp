#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "diffpad/autoencoder.hpp"
#include "diffpad/diffusion.hpp"
#include "diffpad/manifest.hpp"
#include "diffpad/similarity.hpp"

namespace diffpad {

// Centered crop; an odd remainder puts the extra pixel at the bottom/right.
// Throws ImageTooSmall.
Image extract_roi(const Image& image, int roi_height, int roi_width);

/// Maps a [0, 1] image to its reconstruction in [0, 1].
class Reconstructor {
 public:
  virtual ~Reconstructor() = default;
  virtual Shape input_shape() const = 0;
  virtual Image reconstruct(const Image& image, std::uint64_t seed) const = 0;
};

/// Truncated-diffusion restoration at step N, in [-1, 1] model space.
class DiffusionReconstructor final : public Reconstructor {
 public:
  DiffusionReconstructor(const NoisePredictor& net, Shape shape, NoiseSchedule schedule,
                         int truncation)
      : net_(net), shape_(shape), schedule_(std::move(schedule)), truncation_(truncation) {}

  Shape input_shape() const override { return shape_; }
  Image reconstruct(const Image& image, std::uint64_t seed) const override;

 private:
  const NoisePredictor& net_;
  Shape shape_;
  NoiseSchedule schedule_;
  int truncation_;
};

class AutoencoderReconstructor final : public Reconstructor {
 public:
  explicit AutoencoderReconstructor(const AutoencoderNetwork& net) : net_(net) {}
  Shape input_shape() const override { return net_.config().image_shape(); }
  Image reconstruct(const Image& image, std::uint64_t seed) const override;

 private:
  const AutoencoderNetwork& net_;
};

enum class Metric { kMse, kSsim, kLpips };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view text);  // InvalidConfig

// Anomaly distance: mse, 1 - ssim, or lpips. `f` is required for lpips.
double distance(Metric metric, const Image& input, const Image& reconstruction,
                const FeatureExtractor* f, const SsimParams& ssim_params = {});

struct PadScore {
  std::string sample_id;
  double score = 0.0;
  std::optional<Label> label;
  std::string pai_type;
};

struct ScoreOptions {
  Metric metric = Metric::kLpips;
  const FeatureExtractor* features = nullptr;
  SsimParams ssim;
  int restarts = 1;  // scores averaged over this many restoration seeds
};

// Seed of restart r: `seed` itself for r = 0, derive_seed(seed, r) after.
PadScore score_sample(const Image& image, const Reconstructor& rec, const ScoreOptions& opt,
                      std::uint64_t seed);
PadScore score_sample(const Image& image, const NoisePredictor& net, const NoiseSchedule& schedule,
                      int truncation, Metric metric, const FeatureExtractor* f, std::uint64_t seed);

struct ScoreFailure {
  std::string sample_id;
  std::string message;
};

struct BatchScores {
  std::vector<PadScore> scores;  // manifest order, failed samples omitted
  std::vector<ScoreFailure> failures;
};

// Loads, ROI-crops and scores every entry with seed derive_seed(base_seed, i).
// Per-sample failures are collected. `jobs` worker threads (<= 1: serial).
BatchScores score_batch(const DatasetManifest& manifest, const Reconstructor& rec,
                        const ScoreOptions& opt, std::uint64_t base_seed, int jobs = 1);

inline constexpr double kRejectAll = -std::numeric_limits<double>::infinity();

// The k-th smallest attack score with k = floor(n * target / 100), moved
// down past ties so at most k attacks sit at or below it; kRejectAll when
// no such value exists. Throws EmptyScores, InvalidConfig.
double calibrate_threshold(std::span<const double> attack_scores, double target_apcer);

struct PadDecision {
  std::string sample_id;
  bool attack = false;
  double score = 0.0;
  double threshold = 0.0;
};

// attack <=> score > threshold.
std::vector<PadDecision> classify(std::span<const PadScore> scores, double threshold);

// "sample_id,label,pai_type,score" with scores at 9 significant digits.
std::string format_scores_csv(std::span<const PadScore> scores);
std::vector<PadScore> parse_scores_csv(std::string_view text);  // ParseError
void save_scores(std::span<const PadScore> scores, const std::filesystem::path& path,
                 const nlohmann::json& meta);  // also writes <path>.meta.json
std::vector<PadScore> load_scores(const std::filesystem::path& path);
// Sidecar metadata, or an empty object when absent.
nlohmann::json load_scores_meta(const std::filesystem::path& path);

}  // namespace diffpad
