#include "diffpad/unet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "diffpad/error.hpp"

namespace diffpad {

using unet_detail::ConvRef;
using unet_detail::Layout;
using unet_detail::NormRef;
using unet_detail::ResBlockRef;

int NetConfig::level_channels(int level) const {
  return base_channels * std::min(1 << level, 4);
}

void NetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidConfig, msg); };
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (base_channels < 1) fail("base_channels must be >= 1");
  if (depth < 0 || depth > 8) fail("depth must be in [0, 8]");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) fail("time_embed_dim must be even and >= 2");
  if (norm_groups < 1) fail("norm_groups must be >= 1");
  if (image_height < 1 || image_width < 1) fail("image dimensions must be positive");
  const int factor = 1 << depth;
  if (image_height % factor != 0 || image_width % factor != 0) {
    fail("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
         " not divisible by 2^depth = " + std::to_string(factor));
  }
}

namespace {

class LayoutBuilder {
 public:
  LayoutBuilder(ParamStore& store, std::mt19937_64& rng, int time_dim, int norm_groups)
      : store_(store), rng_(rng), time_dim_(time_dim), norm_groups_(norm_groups) {}

  ConvRef conv(const std::string& name, int cin, int cout, int k, int stride) {
    ConvRef ref;
    ref.weight = store_.add(name + ".weight", fan_in_uniform(cout, cin, k, k, cin * k * k, rng_));
    ref.bias = store_.add(name + ".bias", Tensor<float>(cout, 1, 1, 1));
    ref.stride = stride;
    ref.pad = k / 2;
    return ref;
  }

  NormRef norm(const std::string& name, int channels) {
    NormRef ref;
    ref.gamma = store_.add(name + ".gamma", Tensor<float>(channels, 1, 1, 1, 1.0f));
    ref.beta = store_.add(name + ".beta", Tensor<float>(channels, 1, 1, 1));
    ref.groups = std::gcd(norm_groups_, channels);
    return ref;
  }

  ResBlockRef res_block(const std::string& name, int cin, int cout) {
    ResBlockRef b;
    b.norm1 = norm(name + ".norm1", cin);
    b.conv1 = conv(name + ".conv1", cin, cout, 3, 1);
    b.time_proj = conv(name + ".time_proj", time_dim_, cout, 1, 1);
    b.norm2 = norm(name + ".norm2", cout);
    b.conv2 = conv(name + ".conv2", cout, cout, 3, 1);
    if (cin != cout) b.skip = conv(name + ".skip", cin, cout, 1, 1);
    return b;
  }

 private:
  ParamStore& store_;
  std::mt19937_64& rng_;
  int time_dim_;
  int norm_groups_;
};

Layout build_layout(const NetConfig& cfg, ParamStore& store, std::mt19937_64& rng) {
  LayoutBuilder b(store, rng, cfg.time_embed_dim, cfg.norm_groups);
  Layout l;
  const int d = cfg.time_embed_dim;
  l.conv_in = b.conv("conv_in", cfg.in_channels, cfg.level_channels(0), 3, 1);
  l.time_fc1 = b.conv("time.fc1", d, d, 1, 1);
  l.time_fc2 = b.conv("time.fc2", d, d, 1, 1);
  int ch = cfg.level_channels(0);
  for (int i = 0; i < cfg.depth; ++i) {
    const int out = cfg.level_channels(i);
    l.down.push_back(b.res_block("down" + std::to_string(i) + ".res", ch, out));
    l.downsample.push_back(b.conv("down" + std::to_string(i) + ".pool", out, out, 3, 2));
    ch = out;
  }
  const int mid = cfg.level_channels(cfg.depth);
  l.mid1 = b.res_block("mid1", ch, mid);
  l.mid2 = b.res_block("mid2", mid, mid);
  ch = mid;
  l.upsample.resize(cfg.depth);
  l.up.resize(cfg.depth);
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const int skip = cfg.level_channels(i);
    l.upsample[i] = b.conv("up" + std::to_string(i) + ".resample", ch, ch, 3, 1);
    l.up[i] = b.res_block("up" + std::to_string(i) + ".res", ch + skip, skip);
    ch = skip;
  }
  l.norm_out = b.norm("norm_out", ch);
  l.conv_out = b.conv("conv_out", ch, cfg.in_channels, 3, 1);
  return l;
}

template <typename T>
ad::Var apply_conv(ad::Tape<T>& tape, std::span<const ad::Var> p, const ConvRef& c, ad::Var x) {
  return ad::conv2d(tape, x, p[c.weight], p[c.bias], c.stride, c.pad);
}

template <typename T>
ad::Var apply_norm(ad::Tape<T>& tape, std::span<const ad::Var> p, const NormRef& n, ad::Var x) {
  return ad::group_norm(tape, x, p[n.gamma], p[n.beta], n.groups);
}

template <typename T>
ad::Var apply_res(ad::Tape<T>& tape, std::span<const ad::Var> p, const ResBlockRef& b, ad::Var x,
                  ad::Var temb) {
  ad::Var h = apply_conv(tape, p, b.conv1, ad::silu(tape, apply_norm(tape, p, b.norm1, x)));
  h = ad::add_channel(tape, h, apply_conv(tape, p, b.time_proj, temb));
  h = apply_conv(tape, p, b.conv2, ad::silu(tape, apply_norm(tape, p, b.norm2, h)));
  const ad::Var skip = b.skip.present() ? apply_conv(tape, p, b.skip, x) : x;
  return ad::add(tape, h, skip);
}

}  // namespace

template <typename T>
Tensor<T> timestep_embedding(std::span<const int> timesteps, int dim) {
  const int half = dim / 2;
  const int n = static_cast<int>(timesteps.size());
  Tensor<T> out(dim, n, 1, 1);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    for (int k = 0; k < n; ++k) {
      const double arg = timesteps[k] * freq;
      out.data[static_cast<std::size_t>(i) * n + k] = static_cast<T>(std::sin(arg));
      out.data[static_cast<std::size_t>(i + half) * n + k] = static_cast<T>(std::cos(arg));
    }
  }
  return out;
}

DenoiserNetwork::DenoiserNetwork(NetConfig config, ParamStore params, Layout layout)
    : config_(std::move(config)), params_(std::move(params)), layout_(std::move(layout)) {}

DenoiserNetwork::DenoiserNetwork(NetConfig config, ParamStore params) : config_(std::move(config)) {
  config_.validate();
  ParamStore reference;
  std::mt19937_64 rng(0);
  layout_ = build_layout(config_, reference, rng);
  if (reference.size() != params.size()) {
    throw Error(ErrorCode::kBadCheckpoint, "expected " + std::to_string(reference.size()) +
                                               " parameter arrays, got " +
                                               std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference[i].name != params[i].name || !reference[i].value.same_shape(params[i].value)) {
      throw Error(ErrorCode::kBadCheckpoint,
                  "parameter " + std::to_string(i) + " is '" + params[i].name + "', expected '" +
                      reference[i].name + "' with matching shape");
    }
  }
  params_ = std::move(params);
}

DenoiserNetwork init_network(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  ParamStore store;
  std::mt19937_64 rng(seed);
  Layout layout = build_layout(config, store, rng);
  return DenoiserNetwork(config, std::move(store), std::move(layout));
}

template <typename T>
ad::Var DenoiserNetwork::forward(ad::Tape<T>& tape, std::span<const ad::Var> p, ad::Var x,
                                 std::span<const int> timesteps) const {
  const Tensor<T>& X = tape.value(x);
  if (X.c != config_.in_channels || X.h != config_.image_height || X.w != config_.image_width ||
      static_cast<std::size_t>(X.n) != timesteps.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "denoiser input " + std::to_string(X.c) + "x" + std::to_string(X.h) + "x" +
                    std::to_string(X.w) + " (batch " + std::to_string(X.n) + "), expected " +
                    config_.image_shape().str());
  }
  const Layout& l = layout_;
  ad::Var temb = tape.leaf(timestep_embedding<T>(timesteps, config_.time_embed_dim));
  temb = ad::silu(tape, apply_conv(tape, p, l.time_fc1, temb));
  temb = ad::silu(tape, apply_conv(tape, p, l.time_fc2, temb));

  ad::Var h = apply_conv(tape, p, l.conv_in, x);
  std::vector<ad::Var> skips;
  for (int i = 0; i < config_.depth; ++i) {
    h = apply_res(tape, p, l.down[i], h, temb);
    skips.push_back(h);
    h = apply_conv(tape, p, l.downsample[i], h);
  }
  h = apply_res(tape, p, l.mid1, h, temb);
  h = apply_res(tape, p, l.mid2, h, temb);
  for (int i = config_.depth - 1; i >= 0; --i) {
    h = apply_conv(tape, p, l.upsample[i], ad::upsample_nearest2x(tape, h));
    h = ad::concat_channels(tape, h, skips[i]);
    h = apply_res(tape, p, l.up[i], h, temb);
  }
  h = ad::silu(tape, apply_norm(tape, p, l.norm_out, h));
  return apply_conv(tape, p, l.conv_out, h);
}

Image DenoiserNetwork::predict_noise(const Image& x_t, int t) const {
  if (x_t.shape() != config_.image_shape()) {
    throw Error(ErrorCode::kShapeMismatch,
                "predict_noise: " + x_t.shape().str() + " vs " + config_.image_shape().str());
  }
  ad::Tape<float> tape(false);
  const auto p = params_.to_tape(tape, false);
  const ad::Var x = tape.leaf(pack_batch<float>(std::span<const Image>(&x_t, 1)));
  const int ts[1] = {t};
  const ad::Var out = forward<float>(tape, p, x, ts);
  return unpack_sample(tape.value(out), 0);
}

template ad::Var DenoiserNetwork::forward<float>(ad::Tape<float>&, std::span<const ad::Var>,
                                                 ad::Var, std::span<const int>) const;
template ad::Var DenoiserNetwork::forward<double>(ad::Tape<double>&, std::span<const ad::Var>,
                                                  ad::Var, std::span<const int>) const;
template Tensor<float> timestep_embedding<float>(std::span<const int>, int);
template Tensor<double> timestep_embedding<double>(std::span<const int>, int);

}  // namespace diffpad
