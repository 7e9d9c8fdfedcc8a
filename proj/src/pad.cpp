#include "diffpad/pad.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "diffpad/error.hpp"
#include "diffpad/io.hpp"
#include "diffpad/params.hpp"
#include "diffpad/train.hpp"

namespace diffpad {

namespace fs = std::filesystem;
using nlohmann::json;

Image extract_roi(const Image& image, int roi_height, int roi_width) {
  if (roi_height < 1 || roi_width < 1) {
    throw Error(ErrorCode::kInvalidConfig, "ROI dimensions must be positive");
  }
  if (image.height() < roi_height || image.width() < roi_width) {
    throw Error(ErrorCode::kImageTooSmall, "image " + image.shape().str() + " smaller than ROI " +
                                               std::to_string(roi_height) + "x" +
                                               std::to_string(roi_width));
  }
  const int top = (image.height() - roi_height) / 2;
  const int left = (image.width() - roi_width) / 2;
  Image out(Shape{image.channels(), roi_height, roi_width});
  for (int c = 0; c < image.channels(); ++c)
    for (int y = 0; y < roi_height; ++y)
      for (int x = 0; x < roi_width; ++x) out.at(c, y, x) = image.at(c, top + y, left + x);
  return out;
}

Image DiffusionReconstructor::reconstruct(const Image& image, std::uint64_t seed) const {
  const Image restored = restore(net_, to_model_space(image), truncation_, schedule_, seed);
  return from_model_space(restored, true);
}

Image AutoencoderReconstructor::reconstruct(const Image& image, std::uint64_t) const {
  return from_model_space(ae_reconstruct(net_, to_model_space(image)), true);
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::kMse: return "mse";
    case Metric::kSsim: return "ssim";
    case Metric::kLpips: return "lpips";
  }
  return "unknown";
}

Metric parse_metric(std::string_view text) {
  for (Metric m : {Metric::kMse, Metric::kSsim, Metric::kLpips}) {
    if (to_string(m) == text) return m;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown metric '" + std::string(text) + "'");
}

double distance(Metric metric, const Image& input, const Image& reconstruction,
                const FeatureExtractor* f, const SsimParams& ssim_params) {
  switch (metric) {
    case Metric::kMse: return mse(input, reconstruction);
    case Metric::kSsim: return 1.0 - ssim(input, reconstruction, ssim_params);
    case Metric::kLpips:
      if (f == nullptr) throw Error(ErrorCode::kInvalidConfig, "lpips needs a feature extractor");
      return lpips(input, reconstruction, *f);
  }
  return 0.0;
}

PadScore score_sample(const Image& image, const Reconstructor& rec, const ScoreOptions& opt,
                      std::uint64_t seed) {
  if (opt.restarts < 1) throw Error(ErrorCode::kInvalidConfig, "restarts must be >= 1");
  if (image.shape() != rec.input_shape()) {
    throw Error(ErrorCode::kShapeMismatch,
                "score_sample: " + image.shape().str() + " vs model " + rec.input_shape().str());
  }
  double total = 0.0;
  for (int r = 0; r < opt.restarts; ++r) {
    const std::uint64_t s = r == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(r));
    total += distance(opt.metric, image, rec.reconstruct(image, s), opt.features, opt.ssim);
  }
  PadScore out;
  out.score = total / opt.restarts;
  if (!std::isfinite(out.score)) {
    throw Error(ErrorCode::kNonFiniteLoss, "non-finite score");
  }
  return out;
}

PadScore score_sample(const Image& image, const NoisePredictor& net, const NoiseSchedule& schedule,
                      int truncation, Metric metric, const FeatureExtractor* f, std::uint64_t seed) {
  const DiffusionReconstructor rec(net, image.shape(), schedule, truncation);
  ScoreOptions opt;
  opt.metric = metric;
  opt.features = f;
  return score_sample(image, rec, opt, seed);
}

BatchScores score_batch(const DatasetManifest& manifest, const Reconstructor& rec,
                        const ScoreOptions& opt, std::uint64_t base_seed, int jobs) {
  const std::size_t n = manifest.size();
  std::vector<std::optional<PadScore>> slots(n);
  std::vector<std::string> errors(n);
  const Shape shape = rec.input_shape();

  auto run_one = [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    try {
      Image img = load_image(manifest.resolve(e));
      if (img.channels() != shape.channels) {
        throw Error(ErrorCode::kShapeMismatch, "image has " + std::to_string(img.channels()) +
                                                   " channels, model expects " +
                                                   std::to_string(shape.channels));
      }
      if (img.height() != shape.height || img.width() != shape.width) {
        img = extract_roi(img, shape.height, shape.width);
      }
      PadScore s = score_sample(img, rec, opt, derive_seed(base_seed, i));
      s.sample_id = e.sample_id;
      s.label = e.label;
      s.pai_type = e.pai_type;
      slots[i] = std::move(s);
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  };

  const std::size_t workers = std::min<std::size_t>(jobs > 1 ? static_cast<std::size_t>(jobs) : 1, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) run_one(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  BatchScores out;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) {
      out.scores.push_back(std::move(*slots[i]));
    } else {
      out.failures.push_back({manifest.entries[i].sample_id, errors[i]});
    }
  }
  return out;
}

double calibrate_threshold(std::span<const double> attack_scores, double target_apcer) {
  if (attack_scores.empty()) throw Error(ErrorCode::kEmptyScores, "no attack scores");
  if (!(target_apcer > 0.0 && target_apcer < 100.0)) {
    throw Error(ErrorCode::kInvalidConfig, "target APCER must be in (0, 100)");
  }
  std::vector<double> s(attack_scores.begin(), attack_scores.end());
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  auto k = static_cast<std::size_t>(std::floor(static_cast<double>(n) * target_apcer / 100.0));
  k = std::min(k, n);
  // Largest j <= k whose j-th order statistic is not tied with the next score.
  std::size_t j = k;
  while (j > 0 && j < n && s[j - 1] == s[j]) --j;
  return j == 0 ? kRejectAll : s[j - 1];
}

std::vector<PadDecision> classify(std::span<const PadScore> scores, double threshold) {
  std::vector<PadDecision> out;
  out.reserve(scores.size());
  for (const PadScore& s : scores) out.push_back({s.sample_id, s.score > threshold, s.score, threshold});
  return out;
}

namespace {

constexpr std::string_view kScoresHeader = "sample_id,label,pai_type,score";

}  // namespace

std::string format_scores_csv(std::span<const PadScore> scores) {
  std::string out(kScoresHeader);
  out += '\n';
  char buf[64];
  for (const PadScore& s : scores) {
    std::snprintf(buf, sizeof(buf), "%.9g", s.score);
    out += s.sample_id + ',' + (s.label ? std::string(to_string(*s.label)) : std::string()) + ',' +
           s.pai_type + ',' + buf + '\n';
  }
  return out;
}

std::vector<PadScore> parse_scores_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  std::vector<PadScore> out;
  auto fail = [&](const std::string& msg) {
    throw Error(ErrorCode::kParseError, "scores line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kScoresHeader) fail("unexpected header '" + line + "'");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find(',', start)) != std::string::npos; start = pos + 1) {
      f.push_back(line.substr(start, pos - start));
    }
    f.push_back(line.substr(start));
    if (f.size() != 4) fail("expected 4 fields");
    PadScore s;
    s.sample_id = f[0];
    if (!f[1].empty()) {
      s.label = parse_label(f[1]);
      if (!s.label) fail("bad label '" + f[1] + "'");
    }
    s.pai_type = f[2];
    char* end = nullptr;
    s.score = std::strtod(f[3].c_str(), &end);
    if (f[3].empty() || *end != '\0') fail("bad score '" + f[3] + "'");
    out.push_back(std::move(s));
  }
  if (lineno == 0) throw Error(ErrorCode::kParseError, "scores line 1: missing header");
  return out;
}

void save_scores(std::span<const PadScore> scores, const fs::path& path, const json& meta) {
  write_file_atomic(path, format_scores_csv(scores));
  fs::path side = path;
  side += ".meta.json";
  write_file_atomic(side, meta.dump(2) + "\n");
}

std::vector<PadScore> load_scores(const fs::path& path) { return parse_scores_csv(read_file(path)); }

json load_scores_meta(const fs::path& path) {
  fs::path side = path;
  side += ".meta.json";
  if (!fs::exists(side)) return json::object();
  try {
    return json::parse(read_file(side));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, side.string() + ": " + e.what());
  }
}

}  // namespace diffpad
