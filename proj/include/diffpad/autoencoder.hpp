#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>

#include "diffpad/checkpoint.hpp"
#include "diffpad/params.hpp"
#include "diffpad/train.hpp"

namespace diffpad {

enum class AeVariant { kCae, kVae };

std::string_view to_string(AeVariant v);

struct AutoencoderConfig {
  AeVariant variant = AeVariant::kCae;
  int in_channels = 1;
  int image_height = 32;
  int image_width = 64;
  int latent_dim = 64;
  std::array<int, 3> widths = {16, 32, 64};

  Shape image_shape() const { return {in_channels, image_height, image_width}; }
  // Channels of the CAE's spatial bottleneck: latent_dim / (h/8 * w/8).
  int latent_channels() const;
  void validate() const;  // InvalidConfig
  bool operator==(const AutoencoderConfig&) const = default;
};

struct AeOutputs {
  ad::Var reconstruction;
  ad::Var mu;      // VAE only
  ad::Var logvar;  // VAE only
};

// Replaces the posterior (mu, logvar) before sampling (test hook).
using PosteriorHook = std::function<void(Tensor<double>& mu, Tensor<double>& logvar)>;

/// Three stride-2 conv stages (SiLU) mirrored by transposed convs. The CAE
/// squeezes to a latent_dim-sized spatial map; the VAE flattens into
/// linear mean and log-variance heads.
class AutoencoderNetwork {
 public:
  // Checks names and shapes against the layout; throws BadCheckpoint.
  AutoencoderNetwork(AutoencoderConfig config, ParamStore params);

  const AutoencoderConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

  // x is (C, N, H, W) in model space. For the VAE, `eps` (latent_dim, N, 1, 1)
  // selects a reparameterized sample; nullptr decodes the mean.
  template <typename T>
  AeOutputs forward(ad::Tape<T>& tape, std::span<const ad::Var> params, ad::Var x,
                    const Tensor<T>* eps, const PosteriorHook& hook = {}) const;

 private:
  friend AutoencoderNetwork init_autoencoder(const AutoencoderConfig&, std::uint64_t);
  AutoencoderNetwork(AutoencoderConfig config, ParamStore params, bool checked);

  AutoencoderConfig config_;
  ParamStore params_;
};

AutoencoderNetwork init_autoencoder(const AutoencoderConfig& config, std::uint64_t seed);

// Deterministic decoder(encoder(image)); the VAE decodes its latent mean.
Image ae_reconstruct(const AutoencoderNetwork& net, const Image& image);

struct VaeLoss {
  double total = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
};

// Reconstruction MSE plus KL(q(z|x) || N(0, I)) with a reparameterized
// sample drawn from `seed`. Throws WrongVariant for a CAE.
VaeLoss vae_loss(const AutoencoderNetwork& net, const Image& image, std::uint64_t seed,
                 const PosteriorHook& hook = {});

// CAE: reconstruction MSE. VAE: ELBO as in vae_loss. `data` in model space.
TrainResult train_autoencoder(AutoencoderNetwork& net, std::span<const Image> data,
                              const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Worst relative directional-derivative error of the training objective.
double ae_gradient_check(const AutoencoderNetwork& net, const Image& x0, int n_directions,
                         std::uint64_t seed, double step = 1e-4);

Checkpoint to_checkpoint(const AutoencoderNetwork& net, int epoch,
                         const std::optional<AdamState>& optimizer, const nlohmann::json& meta);
AutoencoderNetwork autoencoder_from_checkpoint(const Checkpoint& ckpt);  // BadCheckpoint

}  // namespace diffpad
