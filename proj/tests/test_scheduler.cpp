#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "agile/scheduler.hpp"

using namespace agile;

namespace {

Tensor scalar(double v) { return Tensor({1}, {v}); }

Tensor random_tensor(std::vector<int> shape, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g;
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = g(rng);
  return t;
}

}  // namespace

TEST_CASE("single-step schedule") {
  const auto s = make_schedule({1, 1, 0.1, 0.1});
  REQUIRE(s.alpha_bar().size() == 1);
  CHECK(s.alpha_bar()[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.inference_timesteps() == std::vector<int>{0});
}

TEST_CASE("schedule preconditions") {
  CHECK_THROWS_AS(make_schedule({10, 5, 0.0, 0.0}), ConfigError);
  CHECK_THROWS_AS(make_schedule({10, 5, 0.2, 0.1}), ConfigError);
  CHECK_THROWS_AS(make_schedule({10, 5, 0.1, 1.0}), ConfigError);
  CHECK_THROWS_AS(make_schedule({4, 5, 0.1, 0.2}), ConfigError);
  CHECK_THROWS_AS(make_schedule({4, 0, 0.1, 0.2}), ConfigError);
}

TEST_CASE("alpha_bar is a product of linear betas and strictly decreases") {
  const ScheduleParams p{1000, 50, 8.5e-4, 1.2e-2};
  const auto s = make_schedule(p);
  double prod = 1.0;
  for (int t = 0; t < 1000; ++t) {
    prod *= 1.0 - (p.beta_min + (p.beta_max - p.beta_min) * t / 999.0);
    CHECK(s.alpha_bar()[static_cast<std::size_t>(t)] == doctest::Approx(prod).epsilon(1e-12));
    if (t > 0) CHECK(s.alpha_bar()[static_cast<std::size_t>(t)] < s.alpha_bar()[static_cast<std::size_t>(t - 1)]);
  }
  for (const auto& q : {ScheduleParams{7, 3, 0.3, 0.9}, ScheduleParams{100, 100, 1e-4, 1e-4}}) {
    const auto r = make_schedule(q);
    for (std::size_t t = 1; t < r.alpha_bar().size(); ++t) CHECK(r.alpha_bar()[t] < r.alpha_bar()[t - 1]);
  }
}

TEST_CASE("inference map starts at pure noise and strides evenly") {
  const auto s = make_schedule({1000, 50, 1e-4, 2e-2});
  REQUIRE(s.inference_steps() == 50);
  CHECK(s.timestep_for_step(0) == 999);
  CHECK(s.timestep_for_step(1) == 979);
  CHECK(s.timestep_for_step(49) == 19);
  CHECK(s.previous_timestep(0) == 979);
  CHECK(s.previous_timestep(49) == kTerminalTimestep);
  CHECK(s.alpha_bar_at(kTerminalTimestep) == 1.0);
  CHECK_THROWS_AS(s.timestep_for_step(50), DomainError);
}

TEST_CASE("noising endpoints and scalar value") {
  CHECK(noise_with_alpha(scalar(2), scalar(4), 1.0)[0] == 2.0);
  CHECK(noise_with_alpha(scalar(2), scalar(4), 0.0)[0] == 4.0);
  CHECK(std::abs(noise_with_alpha(scalar(2), scalar(4), 0.25)[0] - (1.0 + std::sqrt(0.75) * 4.0)) < 1e-12);
  CHECK(std::abs(noise_with_alpha(scalar(2), scalar(4), 0.25)[0] - 4.4641016151377544) < 1e-9);
  CHECK_THROWS_AS(noise_with_alpha(Tensor({2}), Tensor({3}), 0.5), ShapeError);
}

TEST_CASE("x0 prediction inverts noising") {
  CHECK(predict_x0_with_alpha(scalar(3.5), scalar(-1), 1.0)[0] == 3.5);
  CHECK(std::abs(predict_x0_with_alpha(scalar(1.0 + std::sqrt(0.75) * 4.0), scalar(4), 0.25)[0] - 2.0) < 1e-9);
  CHECK_THROWS_AS(predict_x0_with_alpha(scalar(1), scalar(1), 0.0), DomainError);
}

TEST_CASE("DDIM update endpoints and scalar value") {
  const Tensor f = scalar(2), eps = scalar(4);
  CHECK(ddim_with_alpha(f, eps, 1.0)[0] == 2.0);
  CHECK(ddim_with_alpha(f, eps, 0.0)[0] == 4.0);
  CHECK(std::abs(ddim_with_alpha(f, eps, 0.25)[0] - 4.4641016151377544) < 1e-9);

  const NoiseSchedule s({0.9, 0.25, 0.1}, {2, 1});
  const Latent x{scalar(1.0 + std::sqrt(0.75) * 4.0), 1};
  const Latent last = ddim_step(x, eps, 1, kTerminalTimestep, s);
  CHECK(std::abs(last.values[0] - 2.0) < 1e-9);
  CHECK(last.timestep == kTerminalTimestep);
  CHECK_THROWS_AS(ddim_step(x, eps, 1, 2, s), DomainError);
}

TEST_CASE("round trip across every timestep") {
  const auto s = make_schedule({1000, 50, 8.5e-4, 1.2e-2});
  const Tensor x0 = random_tensor({3, 4, 4}, 1), eps = random_tensor({3, 4, 4}, 2);
  for (int t = 0; t < 1000; ++t) {
    if (!(s.alpha_bar_at(t) > 1e-6)) continue;
    const Latent xt = add_noise({x0, 0}, eps, t, s);
    const Latent back = predict_x0(xt, eps, t, s);
    for (std::size_t i = 0; i < x0.size(); ++i) CHECK(std::abs(back.values[i] - x0[i]) < 1e-5);
  }
}

TEST_CASE("oracle denoiser walks the inference map back to x0") {
  const auto s = make_schedule({1000, 50, 8.5e-4, 1.2e-2});
  const Tensor x0 = random_tensor({3, 4, 4}, 3);
  Latent x{random_tensor({3, 4, 4}, 4), s.timestep_for_step(0)};
  for (int i = 0; i < s.inference_steps(); ++i) {
    const int t = s.timestep_for_step(i);
    const double a = s.alpha_bar_at(t);
    Tensor eps(x0.shape);
    for (std::size_t k = 0; k < eps.size(); ++k) eps[k] = (x.values[k] - std::sqrt(a) * x0[k]) / std::sqrt(1 - a);
    const Latent next = ddim_step(x, eps, t, s.previous_timestep(i), s);
    const Latent again = ddim_step(x, eps, t, s.previous_timestep(i), s);
    CHECK(next.values.data == again.values.data);
    x = next;
  }
  for (std::size_t k = 0; k < x0.size(); ++k) CHECK(std::abs(x.values[k] - x0[k]) < 1e-4);
}

TEST_CASE("schedule constructor rejects malformed inputs") {
  CHECK_THROWS_AS(NoiseSchedule({0.5, 0.6}, {1}), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule({0.9, 0.5}, {0, 1}), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule({0.9, 0.5}, {2}), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule({1.1, 0.5}, {1}), ConfigError);
}
