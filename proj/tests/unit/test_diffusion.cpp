#include <doctest.h>

#include <cmath>
#include <numeric>

#include "diffpad/diffusion.hpp"
#include "diffpad/error.hpp"
#include "diffpad/train.hpp"
#include "diffpad/unet.hpp"
#include "support.hpp"

using namespace diffpad;
using namespace diffpad::testing;

TEST_SUITE("diffusion") {

TEST_CASE("linear schedule hand examples") {
  const NoiseSchedule one = make_linear_schedule(1, 0.5, 0.5);
  CHECK(one.betas() == std::vector<double>{0.5});
  CHECK(one.alpha_bar(1) == doctest::Approx(0.5).epsilon(1e-15));

  const NoiseSchedule two = make_linear_schedule(2, 0.1, 0.2);
  CHECK(two.beta(1) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(two.beta(2) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(two.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(two.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-15));
  CHECK(two.alpha_bar(0) == 1.0);
}

TEST_CASE("schedule invariants against a long-double product oracle") {
  for (auto [T, lo, hi] : {std::tuple{1000, 1e-4, 0.02}, std::tuple{100, 1e-3, 0.2}, std::tuple{7, 0.01, 0.5}}) {
    const NoiseSchedule s = make_linear_schedule(T, lo, hi);
    REQUIRE(s.steps() == T);
    long double running = 1.0L;
    for (int t = 1; t <= T; ++t) {
      const long double beta = lo + (hi - lo) * (T == 1 ? 0.0L : static_cast<long double>(t - 1) / (T - 1));
      running *= 1.0L - beta;
      CHECK(s.beta(t) > 0.0);
      CHECK(s.beta(t) < 1.0);
      CHECK(std::abs(s.alpha_bar(t) - static_cast<double>(running)) <= 1e-12 * static_cast<double>(running));
      CHECK(s.alpha_bar(t) > 0.0);
      CHECK(s.alpha_bar(t) < 1.0);
      CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
  }
}

TEST_CASE("invalid schedules") {
  CHECK_THROWS_AS(make_linear_schedule(0, 0.1, 0.2), Error);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.2), Error);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.3, 0.2), Error);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.1, 1.0), Error);
  CHECK_THROWS_AS(NoiseSchedule::from_betas({0.1, 1.5}), Error);
  CHECK(default_truncation(100) == 25);
  CHECK(default_truncation(10) == 3);
}

TEST_CASE("forward_step examples") {
  const NoiseSchedule s = make_linear_schedule(10, 0.01, 0.3);
  const Shape shape{1, 4, 4};
  const Image n = gaussian_image(shape, 1);
  const Image zero(shape);
  for (int t : {1, 5, 10}) {
    const Image out = forward_step(zero, t, n, s);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == std::sqrt(s.beta(t)) * n.data()[i]);
  }
  const NoiseSchedule tiny = make_linear_schedule(1, 1e-12, 1e-12);
  const Image x = random_image(shape, 2);
  // The drift is sqrt(beta) * |noise|, so the bound needs |noise| < 1.
  const Image bounded = random_image(shape, 3, -0.9, 0.9);
  const Image out = forward_step(x, 1, bounded, tiny);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out.data()[i] - x.data()[i]) < 1e-6);
  CHECK_THROWS_AS(forward_step(x, 0, n, s), Error);
  CHECK_THROWS_AS(forward_step(x, 11, n, s), Error);
}

TEST_CASE("iterated forward steps match the marginal moments") {
  const NoiseSchedule s = make_linear_schedule(100, 1e-3, 0.2);
  const Shape shape{1, 100, 100};  // 10 000 scalar trials
  for (double x0v : {0.0, 0.7}) {
    for (int t_end : {1, 10, 50, 100}) {
      Image x(shape, x0v);
      for (int t = 1; t <= t_end; ++t) {
        x = forward_step(x, t, gaussian_image(shape, 1000 + 17 * t + static_cast<int>(x0v * 10)), s);
      }
      const Image m = forward_marginal(Image(shape, x0v), t_end, gaussian_image(shape, 7 + t_end), s);
      const double mean = std::sqrt(s.alpha_bar(t_end)) * x0v;
      const double var = 1.0 - s.alpha_bar(t_end);
      const double n = static_cast<double>(shape.size());
      for (const Image* img : {static_cast<const Image*>(&x), &m}) {
        const Moments mo = moments(img->values());
        CHECK(std::abs(mo.mean - mean) < 3.0 * std::sqrt(var / n));
        CHECK(std::abs(mo.var - var) < 3.0 * var * std::sqrt(2.0 / (n - 1.0)));
      }
    }
  }
}

TEST_CASE("forward_marginal examples") {
  const NoiseSchedule s2 = make_linear_schedule(2, 0.1, 0.2);
  const Shape scalar{1, 1, 1};
  const Image x0 = random_image({1, 3, 3}, 4);
  CHECK(forward_marginal(x0, 0, gaussian_image(x0.shape(), 5), s2) == x0);

  const Image n = gaussian_image(x0.shape(), 6);
  const Image z = forward_marginal(Image(x0.shape()), 2, n, s2);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z.data()[i] == doctest::Approx(std::sqrt(0.28) * n.data()[i]));

  // Two forward steps with equal noises n1 = n2 = c carry total noise
  // (√(0.8·0.1) + √0.2)·c, which equals √0.28 · 0.5 for the c below.
  const double c = std::sqrt(0.28) * 0.5 / (std::sqrt(0.08) + std::sqrt(0.2));
  const Image one(scalar, 1.0);
  const Image composed = forward_step(forward_step(one, 1, Image(scalar, c), s2), 2, Image(scalar, c), s2);
  const double expected = std::sqrt(0.72) + std::sqrt(0.28) * 0.5;
  CHECK(composed.data()[0] == doctest::Approx(expected).epsilon(1e-13));
  CHECK(forward_marginal(one, 2, Image(scalar, 0.5), s2).data()[0] == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("signal decays with t") {
  const NoiseSchedule s = make_linear_schedule(100, 1e-3, 0.2);
  const Shape shape{1, 64, 64};
  const Image x0 = gaussian_image(shape, 11);
  std::vector<double> corr;
  const std::vector<int> grid = {1, 5, 10, 20, 40, 60, 80, 100};
  for (int t : grid) {
    const Image xt = forward_marginal(x0, t, gaussian_image(shape, 100 + t), s);
    const Moments a = moments(x0.values()), b = moments(xt.values());
    double cov = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) cov += (x0.data()[i] - a.mean) * (xt.data()[i] - b.mean);
    cov /= static_cast<double>(x0.size() - 1);
    corr.push_back(cov / std::sqrt(a.var * b.var));
  }
  // Spearman rank correlation between t and the correlation is -1.
  std::vector<std::size_t> order(corr.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return corr[i] > corr[j]; });
  for (std::size_t k = 0; k < order.size(); ++k) CHECK(order[k] == k);
}

TEST_CASE("reverse_step examples") {
  const NoiseSchedule s = make_linear_schedule(10, 0.01, 0.3);
  const Shape shape{1, 3, 5};
  const ConstantNet zero_net;
  for (int t : {1, 4, 10}) {
    const Image out = reverse_step(zero_net, Image(shape), t, s, Image(shape));
    for (double v : out.values()) CHECK(v == 0.0);
  }

  // β_t = 0.1 with ᾱ_t = 0.72 needs β_{t-1} = 0.2.
  const NoiseSchedule custom = NoiseSchedule::from_betas({0.2, 0.1});
  REQUIRE(custom.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-15));
  const Shape scalar{1, 1, 1};
  const ConstantNet eps_net(0.3);
  const double got = reverse_step(eps_net, Image(scalar, 1.0), 2, custom, Image(scalar)).data()[0];
  const double oracle = (1.0 - 0.1 * 0.3 / std::sqrt(0.28)) / std::sqrt(0.9);
  CHECK(got == doctest::Approx(oracle).epsilon(1e-14));

  const Image x = gaussian_image(shape, 3);
  const Image a = reverse_step(eps_net, x, 1, s, gaussian_image(shape, 4));
  const Image b = reverse_step(eps_net, x, 1, s, gaussian_image(shape, 5));
  CHECK(a == b);
  CHECK_FALSE(reverse_step(eps_net, x, 2, s, gaussian_image(shape, 4)) ==
              reverse_step(eps_net, x, 2, s, gaussian_image(shape, 5)));
}

TEST_CASE("ancestral_sample") {
  const NoiseSchedule s = make_linear_schedule(20, 0.01, 0.2);
  const Shape shape{1, 4, 8};
  const ConstantNet net(0.1);
  CHECK(ancestral_sample(net, shape, s, 42) == ancestral_sample(net, shape, s, 42));
  CHECK_FALSE(ancestral_sample(net, shape, s, 42) == ancestral_sample(net, shape, s, 43));

  const NoiseSchedule one = make_linear_schedule(1, 0.3, 0.3);
  const ConstantNet zero_net;
  const Image x1 = GaussianNoise(9).draw(shape);
  const Image out = ancestral_sample(zero_net, shape, one, 9);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == doctest::Approx(x1.data()[i] / std::sqrt(0.7)));
}

TEST_CASE("restore") {
  const NoiseSchedule s = make_linear_schedule(8, 0.05, 0.3);
  const Shape shape{1, 4, 4};
  const Image y0 = random_image(shape, 8, -1.0, 1.0);
  const ConstantNet zero_net;
  ZeroNoise zeros;
  const Image r = restore(zero_net, y0, 1, s, zeros);
  const double factor = std::sqrt(s.alpha_bar(1)) / std::sqrt(1.0 - s.beta(1));
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(r.data()[i] == doctest::Approx(factor * y0.data()[i]).epsilon(1e-14));

  const ConstantNet net(0.05);
  CHECK(restore(net, y0, 3, s, 5) == restore(net, y0, 3, s, 5));
  CHECK_THROWS_AS(restore(net, y0, 0, s, 5), Error);
  CHECK_THROWS_AS(restore(net, y0, 8, s, 5), Error);
}

TEST_CASE("restore from T-1 agrees with ancestral sampling on the same stream") {
  const NoiseSchedule s = make_linear_schedule(6, 0.05, 0.4);
  const Shape shape{1, 2, 3};
  const ConstantNet net(0.2);
  const std::vector<double> stream = gaussian_values(shape.size() * 8, 77);

  RecordedNoise full(stream);
  const Image sampled = ancestral_sample(net, shape, s, full);

  // The state after the first reverse step is x_{T-1}.
  RecordedNoise head(stream);
  const Image xT = head.draw(shape);
  const Image z = head.draw(shape);
  const Image x_prev = reverse_step(net, xT, s.steps(), s, z);
  const Image chained = reverse_chain(net, x_prev, s.steps() - 1, s, head);
  CHECK(chained == sampled);
}

TEST_CASE("training_loss examples") {
  const NoiseSchedule s = make_linear_schedule(50, 1e-3, 0.2);
  const Shape shape{1, 4, 4};
  const Image x0 = random_image(shape, 1, -1.0, 1.0);
  const LossDraw draw = draw_loss_inputs(std::span<const Image>(&x0, 1), s, 123);
  const FixedNet oracle(draw.noises[0]);
  CHECK(training_loss(oracle, std::span<const Image>(&x0, 1), s, 123) == 0.0);

  const Shape big{1, 100, 100};
  const std::vector<Image> batch = {Image(big, 0.3)};
  const double loss = training_loss(ConstantNet(), batch, s, 5);
  CHECK(std::abs(loss - 1.0) < 3.0 * std::sqrt(2.0 / 10000.0));
  CHECK(training_loss(ConstantNet(), batch, s, 5) == loss);
  CHECK_THROWS_AS(training_loss(ConstantNet(), std::span<const Image>(), s, 5), Error);
}

TEST_CASE("restoration favours the training image over structure-free noise") {
  NetConfig cfg;
  cfg.base_channels = 8;
  cfg.depth = 1;
  cfg.time_embed_dim = 16;
  cfg.norm_groups = 4;
  cfg.image_height = 8;
  cfg.image_width = 8;
  DenoiserNetwork net = init_network(cfg, 3);
  const NoiseSchedule s = make_linear_schedule(40, 1e-3, 0.3);
  Image star({1, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) star.at(0, y, x) = 0.5 + 0.4 * std::sin(1.3 * x + 0.7 * y);
  const Image star_m = to_model_space(star);
  const std::vector<Image> data(64, star_m);
  TrainConfig tc;
  tc.epochs = 40;
  tc.batch_size = 16;
  tc.learning_rate = 3e-3;
  tc.seed = 1;
  train(net, data, s, tc);

  const int n = s.steps() / 4;
  int wins = 0;
  for (int seed = 0; seed < 20; ++seed) {
    const Image g = to_model_space(random_image(star.shape(), 500 + seed));
    const double e_star = mse_of(restore(net, star_m, n, s, seed), star_m);
    const double e_noise = mse_of(restore(net, g, n, s, seed), g);
    wins += e_star < e_noise;
  }
  CHECK(wins == 20);
}

TEST_CASE("sampling recovers mixture mode weights") {
  NetConfig cfg;
  cfg.base_channels = 16;
  cfg.depth = 0;
  cfg.time_embed_dim = 32;
  cfg.norm_groups = 1;
  cfg.image_height = 1;
  cfg.image_width = 1;
  DenoiserNetwork net = init_network(cfg, 5);
  const NoiseSchedule s = make_linear_schedule(50, 1e-3, 0.3);
  std::mt19937_64 rng(8);
  std::bernoulli_distribution left(0.3);
  std::normal_distribution<double> jitter(0.0, 0.08);
  std::vector<Image> data;
  for (int i = 0; i < 2000; ++i) data.emplace_back(Shape{1, 1, 1}, (left(rng) ? -0.5 : 0.5) + jitter(rng));
  TrainConfig tc;
  tc.epochs = 25;
  tc.batch_size = 32;
  tc.learning_rate = 2e-3;
  tc.seed = 2;
  train(net, data, s, tc);

  int n_left = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) n_left += ancestral_sample(net, {1, 1, 1}, s, 10'000 + i).data()[0] < 0.0;
  CHECK(std::abs(static_cast<double>(n_left) / n - 0.3) <= 0.1);
}

}  // TEST_SUITE
