#pragma once

// Test doubles and independent oracles shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <string>
#include <limits>
#include <random>
#include <vector>

#include "diffpad/diffusion.hpp"
#include "diffpad/tensor.hpp"

namespace diffpad::testing {

class ConstantNet final : public NoisePredictor {
 public:
  explicit ConstantNet(double value = 0.0) : value_(value) {}
  Image predict_noise(const Image& x_t, int) const override { return Image(x_t.shape(), value_); }

 private:
  double value_;
};

// Predicts a fixed stored tensor, e.g. the injected noise.
class FixedNet final : public NoisePredictor {
 public:
  explicit FixedNet(Image eps) : eps_(std::move(eps)) {}
  Image predict_noise(const Image&, int) const override { return eps_; }

 private:
  Image eps_;
};

class ZeroNoise final : public NoiseSource {
 public:
  void fill(std::span<double> out) override { std::fill(out.begin(), out.end(), 0.0); }
};

// Replays a fixed list of values; records what was handed out.
class RecordedNoise final : public NoiseSource {
 public:
  explicit RecordedNoise(std::vector<double> values) : values_(std::move(values)) {}
  void fill(std::span<double> out) override {
    for (double& v : out) v = values_.at(pos_++);
  }
  std::size_t used() const { return pos_; }

 private:
  std::vector<double> values_;
  std::size_t pos_ = 0;
};

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("diffpad_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<double> gaussian_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (double& v : out) v = normal(rng);
  return out;
}

inline Image random_image(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(shape);
  for (double& v : img.values()) v = u(rng);
  return img;
}

inline Image gaussian_image(Shape shape, std::uint64_t seed) {
  return Image(shape, gaussian_values(shape.size(), seed));
}

inline double mse_of(const Image& a, const Image& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  return acc / static_cast<double>(a.size());
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // unbiased
};

inline Moments moments(std::span<const double> v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(v.size() - 1);
  return m;
}

// Brute-force operating point: scan -inf and every attack score, keep the
// largest threshold whose APCER stays within the target, report BPCER there.
struct SweepResult {
  double threshold = 0.0;
  double bpcer = 0.0;
};

inline SweepResult sweep_oracle(const std::vector<double>& bona, const std::vector<double>& att,
                                double target) {
  std::vector<double> candidates = att;
  candidates.push_back(-std::numeric_limits<double>::infinity());
  SweepResult best{-std::numeric_limits<double>::infinity(), 0.0};
  bool found = false;
  for (double c : candidates) {
    std::size_t accepted = 0;
    for (double a : att) accepted += a <= c;
    if (static_cast<double>(accepted) * 100.0 > target * static_cast<double>(att.size())) continue;
    if (!found || c > best.threshold) {
      best.threshold = c;
      found = true;
    }
  }
  std::size_t rejected = 0;
  for (double b : bona) rejected += b > best.threshold;
  best.bpcer = 100.0 * static_cast<double>(rejected) / static_cast<double>(bona.size());
  return best;
}

}  // namespace diffpad::testing
