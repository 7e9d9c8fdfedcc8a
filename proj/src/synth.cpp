#include "diffpad/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "diffpad/error.hpp"
#include "diffpad/io.hpp"
#include "diffpad/params.hpp"

namespace diffpad {

namespace fs = std::filesystem;
using std::numbers::pi;

std::string_view to_string(PaiType p) {
  switch (p) {
    case PaiType::kBlur: return "blur";
    case PaiType::kHalftone: return "halftone";
    case PaiType::kFlatten: return "flatten";
    case PaiType::kMoire: return "moire";
  }
  return "unknown";
}

PaiType parse_pai_type(std::string_view text) {
  for (PaiType p : {PaiType::kBlur, PaiType::kHalftone, PaiType::kFlatten, PaiType::kMoire}) {
    if (to_string(p) == text) return p;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown PAI type '" + std::string(text) + "'");
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidConfig, msg); };
  if (n_bonafide < 0 || n_attack_per_pai < 0) fail("sample counts must be >= 0");
  if (channels != 1 && channels != 3) fail("channels must be 1 or 3");
  if (height < 1 || width < 1) fail("image size must be positive");
  if (!(freq_min > 0.0) || !(freq_max >= freq_min)) fail("need 0 < freq_min <= freq_max");
  if (images_per_subject < 1) fail("images_per_subject must be >= 1");
  if (!(noise_sigma >= 0.0) || !(blur_radius >= 0.0)) fail("noise and blur must be >= 0");
}

RidgeParams draw_subject_ridges(const SynthConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  RidgeParams p;
  p.freq = cfg.freq_min + (cfg.freq_max - cfg.freq_min) * u01(rng);
  p.angle = pi * u01(rng);
  p.amplitude = 0.3 + 0.1 * u01(rng);
  p.mean = 0.45 + 0.1 * u01(rng);
  p.phase = 2.0 * pi * u01(rng);
  for (auto& w : p.warp) {
    w[0] = 0.4 + 0.8 * u01(rng);
    w[1] = -1.2 + 2.4 * u01(rng);
    w[2] = -1.2 + 2.4 * u01(rng);
    w[3] = 2.0 * pi * u01(rng);
  }
  return p;
}

RidgeParams jitter_ridges(const RidgeParams& subject, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  RidgeParams p = subject;
  p.freq *= 1.0 + 0.04 * u(rng);
  p.angle += 0.1 * u(rng);
  p.amplitude += 0.02 * u(rng);
  p.phase = pi * (1.0 + u(rng));
  for (auto& w : p.warp) w[3] += 0.3 * u(rng);
  return p;
}

Image render_ridges(const RidgeParams& p, const Shape& shape) {
  Image img(shape);
  const double scale = 1.0 / shape.width;
  const double ca = std::cos(p.angle);
  const double sa = std::sin(p.angle);
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      const double u = x * scale;
      const double v = y * scale;
      double phase = 2.0 * pi * p.freq * (u * ca + v * sa) + p.phase;
      for (const auto& w : p.warp) phase += w[0] * std::sin(2.0 * pi * (w[1] * u + w[2] * v) + w[3]);
      const double value = p.mean + p.amplitude * std::cos(phase);
      for (int c = 0; c < shape.channels; ++c) img.at(c, y, x) = value;
    }
  }
  return img;
}

namespace {

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
  if (!(sigma > 0.0)) return img;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  const int h = img.height();
  const int w = img.width();
  Image tmp(img.shape());
  Image out(img.shape());
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * img.at(c, y, reflect(x + i, w));
        tmp.at(c, y, x) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(c, reflect(y + i, h), x);
        out.at(c, y, x) = acc;
      }
  }
  return out;
}

Image apply_pai(PaiType pai, const Image& clean, const SynthConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  switch (pai) {
    case PaiType::kBlur:
      return gaussian_blur(clean, cfg.blur_radius);
    case PaiType::kHalftone: {
      // Clustered-dot ordered dither, printed at reduced contrast.
      static constexpr int kDot[4][4] = {{12, 5, 6, 13}, {4, 0, 1, 7}, {11, 3, 2, 8}, {15, 10, 9, 14}};
      const int ox = static_cast<int>(4 * u01(rng));
      const int oy = static_cast<int>(4 * u01(rng));
      Image out(clean.shape());
      for (int c = 0; c < clean.channels(); ++c)
        for (int y = 0; y < clean.height(); ++y)
          for (int x = 0; x < clean.width(); ++x) {
            const double t = (kDot[(y + oy) % 4][(x + ox) % 4] + 0.5) / 16.0;
            out.at(c, y, x) = clean.at(c, y, x) > t ? 0.8 : 0.2;
          }
      return out;
    }
    case PaiType::kFlatten: {
      const Image local = gaussian_blur(clean, 3.0);
      Image out(clean.shape());
      for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] = local.data()[i] + 0.35 * (clean.data()[i] - local.data()[i]);
      }
      return out;
    }
    case PaiType::kMoire: {
      const double px = 2.2 + u01(rng);
      const double py = 2.2 + u01(rng);
      const double fx = 2.0 * pi * u01(rng);
      const double fy = 2.0 * pi * u01(rng);
      Image out(clean.shape());
      for (int c = 0; c < clean.channels(); ++c)
        for (int y = 0; y < clean.height(); ++y)
          for (int x = 0; x < clean.width(); ++x) {
            const double grid = 0.5 * (std::cos(2.0 * pi * x / px + fx) + std::cos(2.0 * pi * y / py + fy));
            out.at(c, y, x) = clean.at(c, y, x) * (1.0 + 0.3 * grid);
          }
      return out;
    }
  }
  return clean;
}

void add_capture_noise(Image& img, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, sigma > 0.0 ? sigma : 1.0);
  for (double& v : img.values()) {
    if (sigma > 0.0) v += n(rng);
    v = std::clamp(v, 0.0, 1.0);
  }
}

DatasetManifest generate_synthetic(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + (out_dir / "images").string());

  const Shape shape{cfg.channels, cfg.height, cfg.width};
  DatasetManifest m;
  m.base_dir = out_dir;
  char id[64];
  char subj[32];

  // Bona fide: subject parameters from stream 0, per-image draws from
  // per-sample streams so any image can be regenerated alone.
  std::mt19937_64 subject_rng(derive_seed(cfg.seed, 0));
  RidgeParams subject;
  for (int i = 0; i < cfg.n_bonafide; ++i) {
    const int s = i / cfg.images_per_subject;
    if (i % cfg.images_per_subject == 0) subject = draw_subject_ridges(cfg, subject_rng);
    std::mt19937_64 rng(derive_seed(cfg.seed, 1000000 + static_cast<std::uint64_t>(i)));
    Image img = render_ridges(jitter_ridges(subject, rng), shape);
    add_capture_noise(img, cfg.noise_sigma, rng);
    std::snprintf(id, sizeof(id), "bf_%05d", i);
    const std::string rel = std::string("images/") + id + ".png";
    save_image(img, out_dir / rel);
    std::snprintf(subj, sizeof(subj), "s%03d", s);
    m.entries.push_back({id, rel, Label::kBonafide, "", subj, "synthetic"});
  }

  for (std::size_t p = 0; p < cfg.pai_types.size(); ++p) {
    const PaiType pai = cfg.pai_types[p];
    for (int i = 0; i < cfg.n_attack_per_pai; ++i) {
      std::mt19937_64 rng(derive_seed(cfg.seed, 2000000 + 100000 * p + static_cast<std::uint64_t>(i)));
      const RidgeParams base = draw_subject_ridges(cfg, rng);
      Image img = apply_pai(pai, render_ridges(jitter_ridges(base, rng), shape), cfg, rng);
      add_capture_noise(img, cfg.noise_sigma, rng);
      std::snprintf(id, sizeof(id), "%s_%05d", std::string(to_string(pai)).c_str(), i);
      const std::string rel = std::string("images/") + id + ".png";
      save_image(img, out_dir / rel);
      m.entries.push_back({id, rel, Label::kAttack, std::string(to_string(pai)), "", "synthetic"});
    }
  }
  save_manifest(m, out_dir / "manifest.csv");
  return m;
}

}  // namespace diffpad
