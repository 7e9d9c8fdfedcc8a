#include "diffpad/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "diffpad/error.hpp"

namespace diffpad {

using nlohmann::json;

double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  if (a.size() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

void SsimParams::validate() const {
  if (window_size < 3 || window_size % 2 == 0) {
    throw Error(ErrorCode::kInvalidConfig, "ssim window must be odd and >= 3");
  }
  if (!(window_sigma > 0.0) || !(k1 > 0.0) || !(k2 > 0.0) || !(dynamic_range > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "ssim sigma, k1, k2 and range must be positive");
  }
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(size);
  const int r = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    g[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Separable "valid" filtering of an h x w plane.
std::vector<double> filter_valid(const double* src, int h, int w, const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int oh = h - k + 1;
  const int ow = w - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[i] * src[y * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b, const SsimParams& p) {
  p.validate();
  require_same_shape(a, b, "ssim");
  const int h = a.height();
  const int w = a.width();
  if (h < p.window_size || w < p.window_size) {
    throw Error(ErrorCode::kImageTooSmall, "ssim: image " + a.shape().str() + " smaller than window " +
                                               std::to_string(p.window_size));
  }
  const std::vector<double> g = gaussian_window(p.window_size, p.window_sigma);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    const double* x = a.data().data() + c * plane;
    const double* y = b.data().data() + c * plane;
    std::vector<double> xx(plane), yy(plane), xy(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, g);
    const auto my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx.data(), h, w, g);
    const auto syy = filter_valid(yy.data(), h, w, g);
    const auto sxy = filter_valid(xy.data(), h, w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
      const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
      acc += num / den;
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / a.channels();
}

FeatureExtractor::FeatureExtractor(std::vector<FeatureStage> stages, ParamStore params,
                                   std::vector<int> taps, std::vector<double> layer_weights,
                                   std::string source)
    : stages_(std::move(stages)),
      params_(std::move(params)),
      taps_(std::move(taps)),
      layer_weights_(std::move(layer_weights)),
      source_(std::move(source)) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kBadCheckpoint, msg); };
  if (stages_.empty()) fail("feature extractor has no stages");
  if (taps_.empty()) fail("feature extractor needs at least one tap");
  if (layer_weights_.size() != taps_.size()) fail("one layer weight per tap required");
  for (double wgt : layer_weights_)
    if (!(wgt >= 0.0)) fail("layer weights must be >= 0");
  if (!std::is_sorted(taps_.begin(), taps_.end()) ||
      std::adjacent_find(taps_.begin(), taps_.end()) != taps_.end()) {
    fail("taps must be strictly increasing");
  }
  if (taps_.front() < 0 || taps_.back() >= static_cast<int>(stages_.size())) fail("tap out of range");
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const FeatureStage& s = stages_[i];
    if (i > 0 && s.in_channels != stages_[i - 1].out_channels) fail("stage widths do not chain");
    const int wi = params_.find(s.name + ".weight");
    const int bi = params_.find(s.name + ".bias");
    if (wi < 0 || bi < 0) fail("missing parameters for stage " + s.name);
    const Tensor<float>& wt = params_[wi].value;
    const Tensor<float>& bt = params_[bi].value;
    if (wt.c != s.out_channels || wt.n != s.in_channels || wt.h != s.kernel || wt.w != s.kernel ||
        bt.c != s.out_channels || bt.size() != static_cast<std::size_t>(s.out_channels)) {
      fail("parameter shape mismatch for stage " + s.name);
    }
    for (const Tensor<float>* t : {&wt, &bt}) {
      Tensor<double> d(t->c, t->n, t->h, t->w);
      std::copy(t->data.begin(), t->data.end(), d.data.begin());
      weights_.push_back(std::move(d));
    }
  }
}

std::vector<Tensor<double>> FeatureExtractor::activations(const Image& image,
                                                          std::span<const double> tap_scale) const {
  if (image.channels() != in_channels()) {
    throw Error(ErrorCode::kShapeMismatch, "feature extractor expects " +
                                               std::to_string(in_channels()) + " channels, got " +
                                               image.shape().str());
  }
  if (!tap_scale.empty() && tap_scale.size() != taps_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "tap_scale needs one factor per tap");
  }
  ad::Tape<double> tape(false);
  Tensor<double> x0(image.channels(), 1, image.height(), image.width());
  for (std::size_t i = 0; i < x0.size(); ++i) x0.data[i] = 2.0 * image.data()[i] - 1.0;
  ad::Var x = tape.leaf(std::move(x0));
  std::vector<Tensor<double>> out;
  std::size_t next_tap = 0;
  for (std::size_t i = 0; i < stages_.size() && next_tap < taps_.size(); ++i) {
    const FeatureStage& s = stages_[i];
    const ad::Var wv = tape.leaf_view(weights_[2 * i]);
    const ad::Var bv = tape.leaf_view(weights_[2 * i + 1]);
    x = ad::relu(tape, ad::conv2d(tape, x, wv, bv, s.stride, s.kernel / 2));
    if (static_cast<int>(i) == taps_[next_tap]) {
      Tensor<double> act = tape.value(x);
      if (!tap_scale.empty()) {
        for (double& v : act.data) v *= tap_scale[next_tap];
      }
      out.push_back(std::move(act));
      ++next_tap;
    }
  }
  return out;
}

std::vector<double> FeatureExtractor::pooled_features(const Image& image) const {
  const Tensor<double> last = std::move(activations(image).back());
  std::vector<double> v(last.c, 0.0);
  const std::size_t plane = last.plane();
  for (int c = 0; c < last.c; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += last.data[c * plane + i];
    v[c] = acc / static_cast<double>(plane);
  }
  return v;
}

bool FeatureExtractor::operator==(const FeatureExtractor& o) const {
  if (stages_.size() != o.stages_.size()) return false;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const FeatureStage& a = stages_[i];
    const FeatureStage& b = o.stages_[i];
    if (a.name != b.name || a.in_channels != b.in_channels || a.out_channels != b.out_channels ||
        a.kernel != b.kernel || a.stride != b.stride) {
      return false;
    }
  }
  return params_ == o.params_ && taps_ == o.taps_ && layer_weights_ == o.layer_weights_ &&
         source_ == o.source_;
}

namespace {

FeatureExtractor random_extractor(std::uint64_t seed, int in_channels) {
  std::mt19937_64 rng(seed);
  ParamStore params;
  std::vector<FeatureStage> stages;
  const int widths[3] = {16, 32, 64};
  const int strides[3] = {1, 2, 2};
  int cin = in_channels;
  for (int i = 0; i < 3; ++i) {
    const std::string name = "stage" + std::to_string(i);
    params.add(name + ".weight", fan_in_uniform(widths[i], cin, 3, 3, cin * 9, rng));
    params.add(name + ".bias", Tensor<float>(widths[i], 1, 1, 1));
    stages.push_back({name, cin, widths[i], 3, strides[i]});
    cin = widths[i];
  }
  return FeatureExtractor(std::move(stages), std::move(params), {0, 1, 2}, {1.0, 1.0, 1.0},
                          "fixed_random:" + std::to_string(seed));
}

}  // namespace

FeatureExtractor feature_extractor_from_diffusion(const Checkpoint& ckpt) {
  require_kind(ckpt, "diffusion");
  const NetConfig cfg = net_config_from_json(ckpt.config.at("network"));
  std::vector<FeatureStage> stages;
  stages.push_back({"conv_in", cfg.in_channels, cfg.level_channels(0), 3, 1});
  int ch = cfg.level_channels(0);
  for (int i = 0; i < std::min(cfg.depth, 2); ++i) {
    const std::string level = "down" + std::to_string(i);
    stages.push_back({level + ".res.conv1", ch, cfg.level_channels(i), 3, 1});
    ch = cfg.level_channels(i);
    stages.push_back({level + ".pool", ch, ch, 3, 2});
  }
  ParamStore params;
  for (const FeatureStage& s : stages) {
    for (const char* suffix : {".weight", ".bias"}) {
      const int idx = ckpt.params.find(s.name + suffix);
      if (idx < 0) throw Error(ErrorCode::kBadCheckpoint, "diffusion checkpoint lacks " + s.name);
      params.add(s.name + suffix, ckpt.params[idx].value);
    }
  }
  const int last = static_cast<int>(stages.size()) - 1;
  std::vector<int> taps = {0, std::max(last / 2, std::min(1, last)), last};
  taps.erase(std::unique(taps.begin(), taps.end()), taps.end());
  std::vector<double> weights(taps.size(), 1.0);
  return FeatureExtractor(std::move(stages), std::move(params), std::move(taps),
                          std::move(weights), "diffusion_encoder");
}

Checkpoint to_checkpoint(const FeatureExtractor& f) {
  Checkpoint c;
  c.kind = "features";
  json stages = json::array();
  for (const FeatureStage& s : f.stages()) {
    stages.push_back({{"name", s.name},
                      {"in_channels", s.in_channels},
                      {"out_channels", s.out_channels},
                      {"kernel", s.kernel},
                      {"stride", s.stride}});
  }
  c.config = {{"stages", std::move(stages)},
              {"taps", f.taps()},
              {"layer_weights", f.layer_weights()},
              {"source", f.source()}};
  c.params = f.params();
  return c;
}

FeatureExtractor feature_extractor_from_checkpoint(const Checkpoint& ckpt) {
  require_kind(ckpt, "features");
  try {
    std::vector<FeatureStage> stages;
    for (const json& s : ckpt.config.at("stages")) {
      stages.push_back({s.at("name").get<std::string>(), s.at("in_channels").get<int>(),
                        s.at("out_channels").get<int>(), s.at("kernel").get<int>(),
                        s.at("stride").get<int>()});
    }
    return FeatureExtractor(std::move(stages), ckpt.params,
                            ckpt.config.at("taps").get<std::vector<int>>(),
                            ckpt.config.at("layer_weights").get<std::vector<double>>(),
                            ckpt.config.at("source").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadCheckpoint, std::string("features config: ") + e.what());
  }
}

FeatureExtractor build_feature_extractor(const FeatureSource& source) {
  if (source.kind == FeatureSource::Kind::kFixedRandom) {
    if (source.in_channels < 1) throw Error(ErrorCode::kInvalidConfig, "in_channels must be >= 1");
    return random_extractor(source.seed, source.in_channels);
  }
  const Checkpoint ckpt = load_checkpoint(source.checkpoint);
  if (ckpt.kind == "features") return feature_extractor_from_checkpoint(ckpt);
  if (ckpt.kind == "diffusion") return feature_extractor_from_diffusion(ckpt);
  throw Error(ErrorCode::kBadCheckpoint,
              source.checkpoint.string() + ": no feature extractor in a '" + ckpt.kind + "' checkpoint");
}

double lpips(const Image& a, const Image& b, const FeatureExtractor& f,
             std::span<const double> tap_scale) {
  require_same_shape(a, b, "lpips");
  const auto fa = f.activations(a, tap_scale);
  const auto fb = f.activations(b, tap_scale);
  constexpr double kEps = 1e-10;
  double total = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const Tensor<double>& x = fa[l];
    const Tensor<double>& y = fb[l];
    const std::size_t plane = x.plane();
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      double nx = 0.0, ny = 0.0;
      for (int c = 0; c < x.c; ++c) {
        nx += x.data[c * plane + p] * x.data[c * plane + p];
        ny += y.data[c * plane + p] * y.data[c * plane + p];
      }
      nx = std::sqrt(nx) + kEps;
      ny = std::sqrt(ny) + kEps;
      for (int c = 0; c < x.c; ++c) {
        const double d = x.data[c * plane + p] / nx - y.data[c * plane + p] / ny;
        acc += d * d;
      }
    }
    total += f.layer_weights()[l] * acc / static_cast<double>(plane);
  }
  return total;
}

}  // namespace diffpad
