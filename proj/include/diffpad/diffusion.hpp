#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "diffpad/tensor.hpp"

namespace diffpad {

/// Linear-beta variance schedule. Only (T, beta_start, beta_end, family) are
/// persisted; the derived arrays are recomputed on construction.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }
  const char* family() const { return custom_ ? "custom" : "linear"; }

  // Arbitrary β sequence ("custom" family; not serializable). InvalidSchedule.
  static NoiseSchedule from_betas(std::vector<double> betas);

  // 1-based, t in [1, T].
  double beta(int t) const { return betas_.at(static_cast<std::size_t>(t) - 1); }
  // ᾱ_t with the boundary convention ᾱ_0 = 1.
  double alpha_bar(int t) const {
    return t == 0 ? 1.0 : alphas_bar_.at(static_cast<std::size_t>(t) - 1);
  }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas_bar() const { return alphas_bar_; }

  bool operator==(const NoiseSchedule&) const = default;

 private:
  friend NoiseSchedule make_linear_schedule(int, double, double);
  bool custom_ = false;
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  std::vector<double> betas_;
  std::vector<double> alphas_bar_;
};

// Throws InvalidSchedule unless T >= 1 and 0 < beta_start <= beta_end < 1.
NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end);

// Default truncation step ⌈T/4⌉.
int default_truncation(int steps);

/// ε-prediction model seen by the sampler.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Image predict_noise(const Image& x_t, int t) const = 0;
};

/// Supplies standard-normal draws to the samplers. Seeded Gaussian noise is
/// the production source; tests substitute recorded or zero streams.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual void fill(std::span<double> out) = 0;

  Image draw(const Shape& shape) {
    Image img(shape);
    fill(img.values());
    return img;
  }
};

class GaussianNoise final : public NoiseSource {
 public:
  explicit GaussianNoise(std::uint64_t seed) : rng_(seed) {}
  void fill(std::span<double> out) override {
    for (double& v : out) v = normal_(rng_);
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// √(1−β_t)·x_prev + √β_t·noise
Image forward_step(const Image& x_prev, int t, const Image& noise, const NoiseSchedule& schedule);

// √ᾱ_t·x0 + √(1−ᾱ_t)·noise; t = 0 returns x0.
Image forward_marginal(const Image& x0, int t, const Image& noise, const NoiseSchedule& schedule);

// One ancestral step x_t -> x_{t-1} with σ_t² = β_t; the noise is ignored at t = 1.
Image reverse_step(const NoisePredictor& net, const Image& x_t, int t,
                   const NoiseSchedule& schedule, const Image& noise);

// Applies reverse_step for t = t_start..1, drawing noise for every t > 1.
Image reverse_chain(const NoisePredictor& net, Image x, int t_start,
                    const NoiseSchedule& schedule, NoiseSource& noise);

Image ancestral_sample(const NoisePredictor& net, const Shape& shape,
                       const NoiseSchedule& schedule, NoiseSource& noise);
Image ancestral_sample(const NoisePredictor& net, const Shape& shape,
                       const NoiseSchedule& schedule, std::uint64_t seed);

// Truncated restoration: diffuse y0 to step N in one marginal draw, then
// reverse-sample back to step 0. Requires 1 <= N < T.
Image restore(const NoisePredictor& net, const Image& y0, int truncation,
              const NoiseSchedule& schedule, NoiseSource& noise);
Image restore(const NoisePredictor& net, const Image& y0, int truncation,
              const NoiseSchedule& schedule, std::uint64_t seed);

/// Timesteps and target noise drawn for one minibatch of the ε objective.
struct LossDraw {
  std::vector<int> timesteps;
  std::vector<Image> noises;
  std::vector<Image> noisy;  // x_t for each element
};

// Draws t ~ U{1..T} and ε ~ N(0, I) per element, in element order.
LossDraw draw_loss_inputs(std::span<const Image> x0_batch, const NoiseSchedule& schedule,
                          std::uint64_t seed);

// Mean squared error between injected ε and the predictor's ε̂ over the batch.
double training_loss(const NoisePredictor& net, std::span<const Image> x0_batch,
                     const NoiseSchedule& schedule, std::uint64_t seed);

}  // namespace diffpad
