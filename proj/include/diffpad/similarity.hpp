#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "diffpad/checkpoint.hpp"
#include "diffpad/params.hpp"
#include "diffpad/tensor.hpp"

namespace diffpad {

double mse(const Image& a, const Image& b);

struct SsimParams {
  int window_size = 7;
  double window_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const;  // InvalidConfig
};

// Mean SSIM over every fully contained Gaussian window, averaged over
// channels. Throws ShapeMismatch or ImageTooSmall.
double ssim(const Image& a, const Image& b, const SsimParams& p = {});

struct FeatureStage {
  std::string name;  // parameter prefix: <name>.weight, <name>.bias
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
};

/// Frozen conv + ReLU stack whose tapped activations feed lpips and FID.
/// Inputs in [0, 1] are mapped to [-1, 1] before the first stage.
class FeatureExtractor {
 public:
  FeatureExtractor(std::vector<FeatureStage> stages, ParamStore params, std::vector<int> taps,
                   std::vector<double> layer_weights, std::string source);

  const std::vector<FeatureStage>& stages() const { return stages_; }
  const ParamStore& params() const { return params_; }
  const std::vector<int>& taps() const { return taps_; }
  const std::vector<double>& layer_weights() const { return layer_weights_; }
  const std::string& source() const { return source_; }
  int in_channels() const { return stages_.front().in_channels; }

  // One (C, 1, h, w) tensor per tap. `tap_scale`, when non-empty, multiplies
  // each tap's maps by the given factor (test hook).
  std::vector<Tensor<double>> activations(const Image& image,
                                          std::span<const double> tap_scale = {}) const;

  // Spatial mean of the last tap's maps.
  std::vector<double> pooled_features(const Image& image) const;

  bool operator==(const FeatureExtractor& o) const;

 private:
  std::vector<FeatureStage> stages_;
  ParamStore params_;
  std::vector<int> taps_;
  std::vector<double> layer_weights_;
  std::string source_;
  std::vector<Tensor<double>> weights_;  // double copies of params_
};

struct FeatureSource {
  enum class Kind { kFixedRandom, kTrained };
  Kind kind = Kind::kFixedRandom;
  std::uint64_t seed = 0;
  int in_channels = 1;
  std::filesystem::path checkpoint;

  static FeatureSource fixed_random(std::uint64_t seed, int in_channels = 1) {
    return {Kind::kFixedRandom, seed, in_channels, {}};
  }
  static FeatureSource trained(std::filesystem::path checkpoint) {
    return {Kind::kTrained, 0, 1, std::move(checkpoint)};
  }
};

// fixed_random: three 3x3 stages (16, 32, 64 maps; strides 1, 2, 2).
// trained: a "features" checkpoint, or the encoder convolutions of a
// diffusion checkpoint. Taps default to three stages with unit weights.
FeatureExtractor build_feature_extractor(const FeatureSource& source);

Checkpoint to_checkpoint(const FeatureExtractor& f);
FeatureExtractor feature_extractor_from_checkpoint(const Checkpoint& ckpt);  // BadCheckpoint
// Encoder stages of a diffusion checkpoint.
FeatureExtractor feature_extractor_from_diffusion(const Checkpoint& ckpt);

// Sum over taps of w_l times the spatial mean of the squared difference of
// channel-normalized activations (summed over channels).
double lpips(const Image& a, const Image& b, const FeatureExtractor& f,
             std::span<const double> tap_scale = {});

}  // namespace diffpad
