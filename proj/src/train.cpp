#include "diffpad/train.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "diffpad/error.hpp"

namespace diffpad {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidConfig, msg); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be >= 0");
  if (checkpoint_every < 1) fail("checkpoint_every must be >= 1");
}

void Adam::step(ParamStore& params, std::span<const Tensor<float>* const> grads) {
  if (state_.m.empty()) {
    for (const auto& a : params.arrays()) {
      state_.m.emplace_back(a.value.c, a.value.n, a.value.h, a.value.w);
      state_.v.emplace_back(a.value.c, a.value.n, a.value.h, a.value.w);
    }
  }
  ++state_.step;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step));
  const auto b1 = static_cast<float>(beta1_);
  const auto b2 = static_cast<float>(beta2_);
  const auto lr_t = static_cast<float>(lr_ * std::sqrt(c2) / c1);
  const auto eps_t = static_cast<float>(eps_ * std::sqrt(c2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor<float>* g = grads[i];
    if (g == nullptr || g->size() == 0) continue;
    auto& p = params[i].value.data;
    auto& m = state_.m[i].data;
    auto& v = state_.v[i].data;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const float gk = g->data[k];
      m[k] = b1 * m[k] + (1.0f - b1) * gk;
      v[k] = b2 * v[k] + (1.0f - b2) * gk * gk;
      p[k] -= lr_t * m[k] / (std::sqrt(v[k]) + eps_t);
    }
  }
}

Image to_model_space(const Image& unit) {
  Image out(unit.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = 2.0 * unit.data()[i] - 1.0;
  return out;
}

Image from_model_space(const Image& model, bool clamp) {
  Image out(model.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = 0.5 * (model.data()[i] + 1.0);
    out.data()[i] = clamp ? std::clamp(v, 0.0, 1.0) : v;
  }
  return out;
}

TrainResult fit(ParamStore& params, std::size_t n_samples, const TrainConfig& cfg,
                const BatchLoss& batch_loss, const EpochCallback& on_epoch) {
  cfg.validate();
  if (n_samples == 0) throw Error(ErrorCode::kEmptyDataset, "no training images");
  Adam adam(cfg.learning_rate);
  TrainResult result;
  std::vector<std::size_t> order(n_samples);
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      ad::Tape<float> tape(true);
      const auto p = params.to_tape(tape, true);
      const ad::Var loss = batch_loss(tape, p, batch, step++);
      const double value = tape.value(loss).data[0];
      if (!std::isfinite(value)) {
        throw Error(ErrorCode::kNonFiniteLoss, "epoch " + std::to_string(epoch + 1) + ", step " +
                                                   std::to_string(step) + ": loss " +
                                                   std::to_string(value));
      }
      tape.backward(loss);
      std::vector<const Tensor<float>*> grads;
      grads.reserve(p.size());
      for (const ad::Var v : p) grads.push_back(&tape.grad(v));
      adam.step(params, grads);
      loss_sum += value * static_cast<double>(batch.size());
    }
    if (!params.all_finite()) {
      throw Error(ErrorCode::kNonFiniteLoss,
                  "non-finite parameter after epoch " + std::to_string(epoch + 1));
    }
    result.loss_trace.push_back(loss_sum / static_cast<double>(n_samples));
    if (on_epoch) on_epoch({epoch + 1, result.loss_trace.back(), &adam.state()});
  }
  result.optimizer = adam.state();
  return result;
}

TrainResult train(DenoiserNetwork& net, std::span<const Image> data, const NoiseSchedule& schedule,
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
  auto loss = [&](ad::Tape<float>& tape, std::span<const ad::Var> p,
                  std::span<const std::size_t> batch, std::uint64_t step) {
    std::vector<Image> x0;
    x0.reserve(batch.size());
    for (std::size_t i : batch) x0.push_back(data[i]);
    const LossDraw draw = draw_loss_inputs(x0, schedule, derive_seed(cfg.seed ^ 0x5EEDULL, step));
    const ad::Var x = tape.leaf(pack_batch<float>(draw.noisy));
    const ad::Var target = tape.leaf(pack_batch<float>(draw.noises));
    return ad::mse(tape, net.forward<float>(tape, p, x, draw.timesteps), target);
  };
  return fit(net.params(), data.size(), cfg, loss, on_epoch);
}

}  // namespace diffpad
