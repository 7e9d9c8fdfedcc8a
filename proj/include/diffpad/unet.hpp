#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "diffpad/autodiff.hpp"
#include "diffpad/diffusion.hpp"
#include "diffpad/params.hpp"

namespace diffpad {

struct NetConfig {
  int in_channels = 1;
  int base_channels = 32;
  int depth = 2;
  int time_embed_dim = 64;
  int norm_groups = 8;
  int image_height = 32;
  int image_width = 64;

  Shape image_shape() const { return {in_channels, image_height, image_width}; }
  // Channel width at resolution level `level` (0 = full resolution).
  int level_channels(int level) const;
  // Throws InvalidConfig.
  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

namespace unet_detail {

struct ConvRef {
  int weight = -1;
  int bias = -1;
  int stride = 1;
  int pad = 1;
  bool present() const { return weight >= 0; }
};

struct NormRef {
  int gamma = -1;
  int beta = -1;
  int groups = 1;
};

struct ResBlockRef {
  NormRef norm1;
  ConvRef conv1;
  ConvRef time_proj;
  NormRef norm2;
  ConvRef conv2;
  ConvRef skip;  // absent when input and output widths match
};

struct Layout {
  ConvRef conv_in;
  ConvRef time_fc1;
  ConvRef time_fc2;
  std::vector<ResBlockRef> down;
  std::vector<ConvRef> downsample;
  ResBlockRef mid1;
  ResBlockRef mid2;
  std::vector<ConvRef> upsample;
  std::vector<ResBlockRef> up;
  NormRef norm_out;
  ConvRef conv_out;
};

}  // namespace unet_detail

/// Time-conditioned U-Net predicting the noise component of x_t.
///
/// Each resolution level holds one residual block (group norm, SiLU, 3x3
/// conv, per-channel time projection, group norm, SiLU, 3x3 conv) followed
/// by a stride-2 conv. Two residual blocks sit at the bottleneck, and the
/// decoder mirrors the encoder with nearest upsampling, a 3x3 conv, and
/// a skip concatenation. The timestep enters through a sinusoidal
/// embedding and a two-layer MLP.
class DenoiserNetwork final : public NoisePredictor {
 public:
  // Rebuilds the layout from `config` and checks `params` against it
  // (names and shapes); throws BadCheckpoint on mismatch.
  DenoiserNetwork(NetConfig config, ParamStore params);

  const NetConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

  Image predict_noise(const Image& x_t, int t) const override;

  // Graph for a batch x of shape (C, N, H, W) with one timestep per element.
  template <typename T>
  ad::Var forward(ad::Tape<T>& tape, std::span<const ad::Var> params, ad::Var x,
                  std::span<const int> timesteps) const;

 private:
  friend DenoiserNetwork init_network(const NetConfig&, std::uint64_t);
  DenoiserNetwork(NetConfig config, ParamStore params, unet_detail::Layout layout);

  NetConfig config_;
  ParamStore params_;
  unet_detail::Layout layout_;
};

DenoiserNetwork init_network(const NetConfig& config, std::uint64_t seed);

// (D, N, 1, 1) sinusoidal embedding of integer timesteps.
template <typename T>
Tensor<T> timestep_embedding(std::span<const int> timesteps, int dim);

}  // namespace diffpad
