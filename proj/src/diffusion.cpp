#include "diffpad/diffusion.hpp"

#include <cmath>
#include <string>

#include "diffpad/error.hpp"

namespace diffpad {
namespace {

void check_timestep(int t, const NoiseSchedule& schedule, const char* what) {
  if (t < 1 || t > schedule.steps()) {
    throw Error(ErrorCode::kInvalidTimestep, std::string(what) + ": t=" + std::to_string(t) +
                                                 " outside [1, " +
                                                 std::to_string(schedule.steps()) + "]");
  }
}

}  // namespace

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw Error(ErrorCode::kInvalidSchedule, "T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw Error(ErrorCode::kInvalidSchedule,
                "need 0 < beta_start <= beta_end < 1, got [" + std::to_string(beta_start) + ", " +
                    std::to_string(beta_end) + "]");
  }
  NoiseSchedule s;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  s.betas_.resize(static_cast<std::size_t>(steps));
  s.alphas_bar_.resize(static_cast<std::size_t>(steps));
  double running = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    s.betas_[i] = beta;
    running *= 1.0 - beta;
    s.alphas_bar_[i] = running;
  }
  return s;
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw Error(ErrorCode::kInvalidSchedule, "T must be >= 1");
  NoiseSchedule s;
  s.custom_ = true;
  double running = 1.0;
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw Error(ErrorCode::kInvalidSchedule, "beta outside (0, 1)");
    running *= 1.0 - b;
    s.alphas_bar_.push_back(running);
  }
  s.beta_start_ = betas.front();
  s.beta_end_ = betas.back();
  s.betas_ = std::move(betas);
  return s;
}

int default_truncation(int steps) { return (steps + 3) / 4; }

Image forward_step(const Image& x_prev, int t, const Image& noise, const NoiseSchedule& schedule) {
  require_same_shape(x_prev, noise, "forward_step");
  check_timestep(t, schedule, "forward_step");
  const double beta = schedule.beta(t);
  const double keep = std::sqrt(1.0 - beta);
  const double add = std::sqrt(beta);
  Image out(x_prev.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = keep * x_prev.data()[i] + add * noise.data()[i];
  }
  return out;
}

Image forward_marginal(const Image& x0, int t, const Image& noise, const NoiseSchedule& schedule) {
  require_same_shape(x0, noise, "forward_marginal");
  if (t == 0) return x0;
  check_timestep(t, schedule, "forward_marginal");
  const double ab = schedule.alpha_bar(t);
  const double keep = std::sqrt(ab);
  const double add = std::sqrt(1.0 - ab);
  Image out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = keep * x0.data()[i] + add * noise.data()[i];
  }
  return out;
}

Image reverse_step(const NoisePredictor& net, const Image& x_t, int t,
                   const NoiseSchedule& schedule, const Image& noise) {
  check_timestep(t, schedule, "reverse_step");
  if (t > 1) require_same_shape(x_t, noise, "reverse_step");
  const Image eps = net.predict_noise(x_t, t);
  require_same_shape(x_t, eps, "reverse_step prediction");
  const double beta = schedule.beta(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
  const double eps_coef = beta / std::sqrt(1.0 - schedule.alpha_bar(t));
  const double sigma = t > 1 ? std::sqrt(beta) : 0.0;
  Image out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mean = inv_sqrt_alpha * (x_t.data()[i] - eps_coef * eps.data()[i]);
    out.data()[i] = t > 1 ? mean + sigma * noise.data()[i] : mean;
  }
  return out;
}

Image reverse_chain(const NoisePredictor& net, Image x, int t_start,
                    const NoiseSchedule& schedule, NoiseSource& noise) {
  check_timestep(t_start, schedule, "reverse_chain");
  Image z(x.shape());
  for (int t = t_start; t >= 1; --t) {
    if (t > 1) noise.fill(z.values());
    x = reverse_step(net, x, t, schedule, z);
  }
  return x;
}

Image ancestral_sample(const NoisePredictor& net, const Shape& shape,
                       const NoiseSchedule& schedule, NoiseSource& noise) {
  Image x = noise.draw(shape);
  return reverse_chain(net, std::move(x), schedule.steps(), schedule, noise);
}

Image ancestral_sample(const NoisePredictor& net, const Shape& shape,
                       const NoiseSchedule& schedule, std::uint64_t seed) {
  GaussianNoise noise(seed);
  return ancestral_sample(net, shape, schedule, noise);
}

Image restore(const NoisePredictor& net, const Image& y0, int truncation,
              const NoiseSchedule& schedule, NoiseSource& noise) {
  if (truncation < 1 || truncation >= schedule.steps()) {
    throw Error(ErrorCode::kInvalidTimestep,
                "restore: N=" + std::to_string(truncation) + " outside [1, " +
                    std::to_string(schedule.steps()) + ")");
  }
  const Image eps = noise.draw(y0.shape());
  Image x = forward_marginal(y0, truncation, eps, schedule);
  return reverse_chain(net, std::move(x), truncation, schedule, noise);
}

Image restore(const NoisePredictor& net, const Image& y0, int truncation,
              const NoiseSchedule& schedule, std::uint64_t seed) {
  GaussianNoise noise(seed);
  return restore(net, y0, truncation, schedule, noise);
}

LossDraw draw_loss_inputs(std::span<const Image> x0_batch, const NoiseSchedule& schedule,
                          std::uint64_t seed) {
  if (x0_batch.empty()) throw Error(ErrorCode::kEmptyBatch, "training_loss");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_t(1, schedule.steps());
  std::normal_distribution<double> normal(0.0, 1.0);
  LossDraw draw;
  draw.timesteps.reserve(x0_batch.size());
  draw.noises.reserve(x0_batch.size());
  draw.noisy.reserve(x0_batch.size());
  for (const Image& x0 : x0_batch) {
    const int t = pick_t(rng);
    Image eps(x0.shape());
    for (double& v : eps.values()) v = normal(rng);
    draw.noisy.push_back(forward_marginal(x0, t, eps, schedule));
    draw.timesteps.push_back(t);
    draw.noises.push_back(std::move(eps));
  }
  return draw;
}

double training_loss(const NoisePredictor& net, std::span<const Image> x0_batch,
                     const NoiseSchedule& schedule, std::uint64_t seed) {
  const LossDraw draw = draw_loss_inputs(x0_batch, schedule, seed);
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < x0_batch.size(); ++i) {
    const Image pred = net.predict_noise(draw.noisy[i], draw.timesteps[i]);
    require_same_shape(pred, draw.noises[i], "training_loss");
    for (std::size_t k = 0; k < pred.size(); ++k) {
      const double d = pred.data()[k] - draw.noises[i].data()[k];
      acc += d * d;
    }
    count += pred.size();
  }
  return acc / static_cast<double>(count);
}

}  // namespace diffpad
