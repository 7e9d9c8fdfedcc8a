#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "diffpad/manifest.hpp"
#include "diffpad/tensor.hpp"

namespace diffpad {

/// Presentation-attack archetypes of the synthetic generator.
enum class PaiType { kBlur, kHalftone, kFlatten, kMoire };

std::string_view to_string(PaiType p);
PaiType parse_pai_type(std::string_view text);  // InvalidConfig

struct SynthConfig {
  int n_bonafide = 1200;
  int n_attack_per_pai = 50;
  std::vector<PaiType> pai_types = {PaiType::kBlur, PaiType::kHalftone, PaiType::kFlatten,
                                    PaiType::kMoire};
  int channels = 1;
  int height = 32;
  int width = 64;
  double freq_min = 6.0;   // ridge cycles per image width
  double freq_max = 12.0;
  int images_per_subject = 25;
  double noise_sigma = 0.03;
  double blur_radius = 2.0;
  std::uint64_t seed = 0;

  void validate() const;  // InvalidConfig
};

// Warped sinusoidal ridge grating with capture noise, intensities in [0, 1].
// Each subject fixes a base frequency and orientation; each image adds its
// own phase, shift and warp.
struct RidgeParams {
  double freq = 8.0;
  double angle = 0.0;
  double amplitude = 0.35;
  double mean = 0.5;
  double phase = 0.0;
  double warp[3][4] = {};  // amplitude, fx, fy, phase for three warp terms
};

RidgeParams draw_subject_ridges(const SynthConfig& cfg, std::mt19937_64& rng);
RidgeParams jitter_ridges(const RidgeParams& subject, std::mt19937_64& rng);
Image render_ridges(const RidgeParams& p, const Shape& shape);

// Degradations applied before capture noise.
Image gaussian_blur(const Image& img, double sigma);  // sigma <= 0 returns a copy
Image apply_pai(PaiType pai, const Image& clean, const SynthConfig& cfg, std::mt19937_64& rng);
void add_capture_noise(Image& img, double sigma, std::mt19937_64& rng);  // clamps to [0, 1]

// Writes <out_dir>/images/*.png and <out_dir>/manifest.csv. Returns the
// manifest (base_dir = out_dir).
DatasetManifest generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace diffpad
