#include "diffpad/autoencoder.hpp"

#include <cmath>
#include <random>
#include <string>
#include <utility>

#include "diffpad/error.hpp"

namespace diffpad {

using nlohmann::json;

std::string_view to_string(AeVariant v) { return v == AeVariant::kVae ? "vae" : "cae"; }

int AutoencoderConfig::latent_channels() const {
  const int cells = (image_height / 8) * (image_width / 8);
  return cells > 0 ? latent_dim / cells : 0;
}

void AutoencoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidConfig, msg); };
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (image_height < 8 || image_width < 8 || image_height % 8 != 0 || image_width % 8 != 0) {
    fail("autoencoder image dimensions must be positive multiples of 8");
  }
  for (int w : widths)
    if (w < 1) fail("encoder widths must be >= 1");
  if (latent_dim < 1) fail("latent_dim must be >= 1");
  if (variant == AeVariant::kCae) {
    const int cells = (image_height / 8) * (image_width / 8);
    if (latent_dim % cells != 0) {
      fail("CAE latent_dim " + std::to_string(latent_dim) + " not a multiple of the " +
           std::to_string(cells) + " bottleneck cells");
    }
  }
}

namespace {

// Parameter order: enc0..2, bottleneck heads, dec_in, dec0..2.
ParamStore build_params(const AutoencoderConfig& c, std::mt19937_64& rng) {
  ParamStore p;
  auto conv = [&](const std::string& name, int cout, int cin, int k) {
    p.add(name + ".weight", fan_in_uniform(cout, cin, k, k, cin * k * k, rng));
    p.add(name + ".bias", Tensor<float>(cout, 1, 1, 1));
  };
  auto deconv = [&](const std::string& name, int cin, int cout) {
    p.add(name + ".weight", fan_in_uniform(cin, cout, 4, 4, cin * 4, rng));
    p.add(name + ".bias", Tensor<float>(cout, 1, 1, 1));
  };
  const auto& w = c.widths;
  conv("enc0", w[0], c.in_channels, 3);
  conv("enc1", w[1], w[0], 3);
  conv("enc2", w[2], w[1], 3);
  const int flat = w[2] * (c.image_height / 8) * (c.image_width / 8);
  if (c.variant == AeVariant::kCae) {
    conv("latent", c.latent_channels(), w[2], 1);
    conv("dec_in", w[2], c.latent_channels(), 1);
  } else {
    conv("mu", c.latent_dim, flat, 1);
    conv("logvar", c.latent_dim, flat, 1);
    conv("dec_in", flat, c.latent_dim, 1);
  }
  deconv("dec0", w[2], w[1]);
  deconv("dec1", w[1], w[0]);
  deconv("dec2", w[0], c.in_channels);
  return p;
}

}  // namespace

AutoencoderNetwork::AutoencoderNetwork(AutoencoderConfig config, ParamStore params, bool)
    : config_(std::move(config)), params_(std::move(params)) {}

AutoencoderNetwork::AutoencoderNetwork(AutoencoderConfig config, ParamStore params)
    : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(0);
  const ParamStore reference = build_params(config_, rng);
  if (reference.size() != params.size()) {
    throw Error(ErrorCode::kBadCheckpoint, "expected " + std::to_string(reference.size()) +
                                               " autoencoder arrays, got " +
                                               std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference[i].name != params[i].name || !reference[i].value.same_shape(params[i].value)) {
      throw Error(ErrorCode::kBadCheckpoint, "autoencoder parameter '" + params[i].name +
                                                 "' does not match expected '" +
                                                 reference[i].name + "'");
    }
  }
  params_ = std::move(params);
}

AutoencoderNetwork init_autoencoder(const AutoencoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  return AutoencoderNetwork(config, build_params(config, rng), true);
}

template <typename T>
AeOutputs AutoencoderNetwork::forward(ad::Tape<T>& tape, std::span<const ad::Var> p, ad::Var x,
                                      const Tensor<T>* eps, const PosteriorHook& hook) const {
  const Tensor<T>& X = tape.value(x);
  if (X.c != config_.in_channels || X.h != config_.image_height || X.w != config_.image_width) {
    throw Error(ErrorCode::kShapeMismatch, "autoencoder input " + std::to_string(X.c) + "x" +
                                               std::to_string(X.h) + "x" + std::to_string(X.w) +
                                               ", expected " + config_.image_shape().str());
  }
  int k = 0;
  auto conv = [&](ad::Var h, int stride, int pad) {
    const ad::Var out = ad::conv2d(tape, h, p[k], p[k + 1], stride, pad);
    k += 2;
    return out;
  };
  auto deconv = [&](ad::Var h) {
    const ad::Var out = ad::conv_transpose2d(tape, h, p[k], p[k + 1], 2, 1);
    k += 2;
    return out;
  };
  ad::Var h = ad::silu(tape, conv(x, 2, 1));
  h = ad::silu(tape, conv(h, 2, 1));
  h = ad::silu(tape, conv(h, 2, 1));

  AeOutputs out;
  if (config_.variant == AeVariant::kCae) {
    const ad::Var z = conv(h, 1, 0);
    h = ad::silu(tape, conv(z, 1, 0));
  } else {
    const Tensor<T>& H = tape.value(h);
    const int c = H.c, hh = H.h, ww = H.w;
    const ad::Var flat = ad::flatten(tape, h);
    out.mu = conv(flat, 1, 0);
    out.logvar = conv(flat, 1, 0);
    if (hook) {
      const Tensor<T>& M = tape.value(out.mu);
      const Tensor<T>& L = tape.value(out.logvar);
      Tensor<double> md(M.c, M.n, M.h, M.w), ld(L.c, L.n, L.h, L.w);
      std::copy(M.data.begin(), M.data.end(), md.data.begin());
      std::copy(L.data.begin(), L.data.end(), ld.data.begin());
      hook(md, ld);
      Tensor<T> mt(md.c, md.n, md.h, md.w), lt(ld.c, ld.n, ld.h, ld.w);
      std::copy(md.data.begin(), md.data.end(), mt.data.begin());
      std::copy(ld.data.begin(), ld.data.end(), lt.data.begin());
      out.mu = tape.leaf(std::move(mt));
      out.logvar = tape.leaf(std::move(lt));
    }
    const ad::Var z = eps ? ad::reparameterize(tape, out.mu, out.logvar, *eps) : out.mu;
    h = ad::silu(tape, ad::unflatten(tape, conv(z, 1, 0), c, hh, ww));
  }
  h = ad::silu(tape, deconv(h));
  h = ad::silu(tape, deconv(h));
  out.reconstruction = deconv(h);
  return out;
}

template AeOutputs AutoencoderNetwork::forward<float>(ad::Tape<float>&, std::span<const ad::Var>,
                                                      ad::Var, const Tensor<float>*,
                                                      const PosteriorHook&) const;
template AeOutputs AutoencoderNetwork::forward<double>(ad::Tape<double>&, std::span<const ad::Var>,
                                                       ad::Var, const Tensor<double>*,
                                                       const PosteriorHook&) const;

Image ae_reconstruct(const AutoencoderNetwork& net, const Image& image) {
  if (image.shape() != net.config().image_shape()) {
    throw Error(ErrorCode::kShapeMismatch,
                "ae_reconstruct: " + image.shape().str() + " vs " + net.config().image_shape().str());
  }
  ad::Tape<float> tape(false);
  const auto p = net.params().to_tape(tape, false);
  const ad::Var x = tape.leaf(pack_batch<float>(std::span<const Image>(&image, 1)));
  const AeOutputs out = net.forward<float>(tape, p, x, nullptr);
  return unpack_sample(tape.value(out.reconstruction), 0);
}

namespace {

template <typename T>
Tensor<T> latent_noise(int dim, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<T> eps(dim, n, 1, 1);
  for (T& v : eps.data) v = static_cast<T>(normal(rng));
  return eps;
}

}  // namespace

VaeLoss vae_loss(const AutoencoderNetwork& net, const Image& image, std::uint64_t seed,
                 const PosteriorHook& hook) {
  if (net.config().variant != AeVariant::kVae) {
    throw Error(ErrorCode::kWrongVariant, "vae_loss needs a VAE, got a CAE");
  }
  ad::Tape<double> tape(false);
  const auto p = net.params().to_tape(tape, false);
  const ad::Var x = tape.leaf(pack_batch<double>(std::span<const Image>(&image, 1)));
  const Tensor<double> eps = latent_noise<double>(net.config().latent_dim, 1, seed);
  const AeOutputs out = net.forward<double>(tape, p, x, &eps, hook);
  VaeLoss loss;
  loss.reconstruction = tape.value(ad::mse(tape, out.reconstruction, x)).data[0];
  loss.kl = tape.value(ad::gaussian_kl(tape, out.mu, out.logvar)).data[0];
  loss.total = loss.reconstruction + loss.kl;
  return loss;
}

TrainResult train_autoencoder(AutoencoderNetwork& net, std::span<const Image> data,
                              const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorCode::kEmptyDataset, "no training images");
  const Shape expected = net.config().image_shape();
  for (const Image& img : data) {
    if (img.shape() != expected) {
      throw Error(ErrorCode::kShapeMismatch,
                  "training image " + img.shape().str() + " vs model " + expected.str());
    }
  }
  const bool vae = net.config().variant == AeVariant::kVae;
  auto loss = [&](ad::Tape<float>& tape, std::span<const ad::Var> p,
                  std::span<const std::size_t> batch, std::uint64_t step) {
    std::vector<Image> x0;
    x0.reserve(batch.size());
    for (std::size_t i : batch) x0.push_back(data[i]);
    const ad::Var x = tape.leaf(pack_batch<float>(x0));
    if (!vae) return ad::mse(tape, net.forward<float>(tape, p, x, nullptr).reconstruction, x);
    const Tensor<float> eps = latent_noise<float>(net.config().latent_dim, static_cast<int>(batch.size()),
                                                  derive_seed(cfg.seed ^ 0x5EEDULL, step));
    const AeOutputs out = net.forward<float>(tape, p, x, &eps);
    return ad::add(tape, ad::mse(tape, out.reconstruction, x),
                   ad::gaussian_kl(tape, out.mu, out.logvar));
  };
  return fit(net.params(), data.size(), cfg, loss, on_epoch);
}

double ae_gradient_check(const AutoencoderNetwork& net, const Image& x0, int n_directions,
                         std::uint64_t seed, double step) {
  const Tensor<double> input = pack_batch<double>(std::span<const Image>(&x0, 1));
  const bool vae = net.config().variant == AeVariant::kVae;
  const Tensor<double> eps = latent_noise<double>(net.config().latent_dim, 1, seed);
  auto loss = [&](ad::Tape<double>& tape, std::span<const ad::Var> p) {
    const ad::Var x = tape.leaf_view(input);
    const AeOutputs out = net.forward<double>(tape, p, x, vae ? &eps : nullptr);
    const ad::Var rec = ad::mse(tape, out.reconstruction, x);
    return vae ? ad::add(tape, rec, ad::gaussian_kl(tape, out.mu, out.logvar)) : rec;
  };
  return directional_gradient_check(net.params(), loss, n_directions, derive_seed(seed, 1), step);
}

Checkpoint to_checkpoint(const AutoencoderNetwork& net, int epoch,
                         const std::optional<AdamState>& optimizer, const json& meta) {
  const AutoencoderConfig& c = net.config();
  Checkpoint ckpt;
  ckpt.kind = std::string(to_string(c.variant));
  ckpt.config = {{"in_channels", c.in_channels}, {"image_height", c.image_height},
                 {"image_width", c.image_width}, {"latent_dim", c.latent_dim},
                 {"widths", c.widths}};
  ckpt.meta = meta;
  ckpt.epoch = epoch;
  ckpt.params = net.params();
  ckpt.optimizer = optimizer;
  return ckpt;
}

AutoencoderNetwork autoencoder_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "cae" && ckpt.kind != "vae") {
    throw Error(ErrorCode::kBadCheckpoint, "expected a cae or vae checkpoint, found '" + ckpt.kind + "'");
  }
  AutoencoderConfig c;
  c.variant = ckpt.kind == "vae" ? AeVariant::kVae : AeVariant::kCae;
  try {
    c.in_channels = ckpt.config.at("in_channels").get<int>();
    c.image_height = ckpt.config.at("image_height").get<int>();
    c.image_width = ckpt.config.at("image_width").get<int>();
    c.latent_dim = ckpt.config.at("latent_dim").get<int>();
    c.widths = ckpt.config.at("widths").get<std::array<int, 3>>();
    c.validate();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadCheckpoint, std::string("autoencoder config: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::kBadCheckpoint, e.what());
  }
  return AutoencoderNetwork(c, ckpt.params);
}

}  // namespace diffpad
