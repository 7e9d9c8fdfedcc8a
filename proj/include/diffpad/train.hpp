#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "diffpad/autodiff.hpp"
#include "diffpad/diffusion.hpp"
#include "diffpad/params.hpp"
#include "diffpad/unet.hpp"

namespace diffpad {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 2e-4;
  std::uint64_t seed = 0;
  int checkpoint_every = 10;

  void validate() const;  // InvalidConfig unless all fields are positive (lr may be 0)
  bool operator==(const TrainConfig&) const = default;
};

struct AdamState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
  std::int64_t step = 0;
};

/// Adaptive-moment update (beta1 0.9, beta2 0.999, eps 1e-8) with bias
/// correction. Moments are lazily sized on the first step.
class Adam {
 public:
  explicit Adam(double learning_rate) : lr_(learning_rate) {}
  Adam(double learning_rate, AdamState state) : lr_(learning_rate), state_(std::move(state)) {}

  void step(ParamStore& params, std::span<const Tensor<float>* const> grads);

  const AdamState& state() const { return state_; }

 private:
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  AdamState state_;
};

struct TrainProgress {
  int epoch = 0;  // 1-based, completed epochs
  double mean_loss = 0.0;
  const AdamState* optimizer = nullptr;
};

using EpochCallback = std::function<void(const TrainProgress&)>;

struct TrainResult {
  std::vector<double> loss_trace;  // per-epoch mean minibatch loss
  AdamState optimizer;
};

// Loss of one minibatch (indices into the training set) at global step `step`.
using BatchLoss = std::function<ad::Var(ad::Tape<float>&, std::span<const ad::Var>,
                                        std::span<const std::size_t>, std::uint64_t)>;

// Shared minibatch Adam loop: per-epoch shuffle seeded by (cfg.seed, epoch),
// NonFiniteLoss on a non-finite loss or parameter.
TrainResult fit(ParamStore& params, std::size_t n_samples, const TrainConfig& cfg,
                const BatchLoss& batch_loss, const EpochCallback& on_epoch = {});

// Minibatch Adam on the ε-prediction objective. `data` must already be in
// model space (see to_model_space). Deterministic given cfg.seed.
TrainResult train(DenoiserNetwork& net, std::span<const Image> data, const NoiseSchedule& schedule,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// [0, 1] intensities <-> [-1, 1] network space.
Image to_model_space(const Image& unit);
Image from_model_space(const Image& model, bool clamp);

// Central-difference check of a differentiable scalar loss along random
// unit directions in parameter space. `loss` builds the graph on a double
// tape from parameter leaves. Returns the worst relative error |a-f|/max(|a|,|f|),
// or NaN if any evaluation was non-finite.
template <typename LossFn>
double directional_gradient_check(const ParamStore& params, LossFn&& loss, int n_directions,
                                  std::uint64_t seed, double step = 1e-4) {
  std::vector<Tensor<double>> base;
  base.reserve(params.size());
  for (const auto& a : params.arrays()) {
    Tensor<double> t(a.value.c, a.value.n, a.value.h, a.value.w);
    for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = a.value.data[i];
    base.push_back(std::move(t));
  }
  auto evaluate = [&](const std::vector<Tensor<double>>& values, std::vector<Tensor<double>>* grads) {
    ad::Tape<double> tape(grads != nullptr);
    std::vector<ad::Var> vars;
    vars.reserve(values.size());
    for (const auto& v : values) vars.push_back(tape.leaf_view(v, grads != nullptr));
    const ad::Var out = loss(tape, std::span<const ad::Var>(vars));
    const double value = tape.value(out).data[0];
    if (grads) {
      tape.backward(out);
      grads->clear();
      for (std::size_t i = 0; i < vars.size(); ++i) {
        const Tensor<double>& g = tape.grad(vars[i]);
        grads->push_back(g.size() == values[i].size()
                             ? g
                             : Tensor<double>(values[i].c, values[i].n, values[i].h, values[i].w));
      }
    }
    return value;
  };

  std::vector<Tensor<double>> grads;
  evaluate(base, &grads);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (int d = 0; d < n_directions; ++d) {
    std::vector<Tensor<double>> dir = base;
    double norm2 = 0.0;
    for (auto& t : dir)
      for (double& v : t.data) {
        v = normal(rng);
        norm2 += v * v;
      }
    const double inv = 1.0 / std::sqrt(norm2);
    double analytic = 0.0;
    std::vector<Tensor<double>> plus = base, minus = base;
    for (std::size_t i = 0; i < dir.size(); ++i) {
      for (std::size_t k = 0; k < dir[i].size(); ++k) {
        const double u = dir[i].data[k] * inv;
        analytic += grads[i].data[k] * u;
        plus[i].data[k] += step * u;
        minus[i].data[k] -= step * u;
      }
    }
    const double numeric = (evaluate(plus, nullptr) - evaluate(minus, nullptr)) / (2.0 * step);
    if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

// Gradient check of the ε objective for any model exposing params() and a
// templated forward(tape, params, x, timesteps).
template <typename Model>
double gradient_check(const Model& net, const Image& x0, const NoiseSchedule& schedule,
                      int n_directions, std::uint64_t seed, double step = 1e-4) {
  const LossDraw draw = draw_loss_inputs(std::span<const Image>(&x0, 1), schedule, seed);
  const Tensor<double> noisy = pack_batch<double>(draw.noisy);
  const Tensor<double> target = pack_batch<double>(draw.noises);
  auto loss = [&](ad::Tape<double>& tape, std::span<const ad::Var> p) {
    const ad::Var x = tape.leaf_view(noisy);
    const ad::Var y = tape.leaf_view(target);
    return ad::mse(tape, net.template forward<double>(tape, p, x, draw.timesteps), y);
  };
  return directional_gradient_check(net.params(), loss, n_directions, derive_seed(seed, 1), step);
}

}  // namespace diffpad
