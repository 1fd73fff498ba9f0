#include "agile/scheduler.hpp"

#include <cmath>
#include <string>

namespace agile {

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar, std::vector<int> inference_timesteps)
    : alpha_bar_(std::move(alpha_bar)), timesteps_(std::move(inference_timesteps)) {
  if (alpha_bar_.empty()) throw ConfigError("schedule: empty alpha_bar");
  if (!(alpha_bar_.front() <= 1.0) || !(alpha_bar_.back() > 0.0)) {
    throw ConfigError("schedule: alpha_bar must lie in (0, 1]");
  }
  for (std::size_t t = 1; t < alpha_bar_.size(); ++t) {
    if (!(alpha_bar_[t] < alpha_bar_[t - 1])) throw ConfigError("schedule: alpha_bar must strictly decrease");
  }
  if (timesteps_.empty()) throw ConfigError("schedule: no inference timesteps");
  for (std::size_t i = 0; i < timesteps_.size(); ++i) {
    if (timesteps_[i] < 0 || timesteps_[i] >= train_timesteps()) {
      throw ConfigError("schedule: inference timestep out of range");
    }
    if (i > 0 && !(timesteps_[i] < timesteps_[i - 1])) {
      throw ConfigError("schedule: inference timesteps must strictly decrease");
    }
  }
}

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t == kTerminalTimestep) return 1.0;
  if (t < 0 || t >= train_timesteps()) throw DomainError("timestep " + std::to_string(t) + " outside schedule");
  return alpha_bar_[static_cast<std::size_t>(t)];
}

int NoiseSchedule::timestep_for_step(int step) const {
  if (step < 0 || step >= inference_steps()) throw DomainError("step " + std::to_string(step) + " outside schedule");
  return timesteps_[static_cast<std::size_t>(step)];
}

int NoiseSchedule::previous_timestep(int step) const {
  if (step < 0 || step >= inference_steps()) throw DomainError("step " + std::to_string(step) + " outside schedule");
  return step + 1 < inference_steps() ? timesteps_[static_cast<std::size_t>(step) + 1] : kTerminalTimestep;
}

NoiseSchedule make_schedule(const ScheduleParams& p) {
  if (p.inference_steps < 1 || p.train_timesteps < p.inference_steps) {
    throw ConfigError("schedule: need train_timesteps >= inference_steps >= 1");
  }
  if (!(p.beta_min > 0.0) || !(p.beta_min <= p.beta_max) || !(p.beta_max < 1.0)) {
    throw ConfigError("schedule: need 0 < beta_min <= beta_max < 1");
  }
  std::vector<double> alpha_bar(static_cast<std::size_t>(p.train_timesteps));
  double prod = 1.0;
  for (int t = 0; t < p.train_timesteps; ++t) {
    const double frac = p.train_timesteps > 1 ? static_cast<double>(t) / (p.train_timesteps - 1) : 0.0;
    prod *= 1.0 - (p.beta_min + (p.beta_max - p.beta_min) * frac);
    alpha_bar[static_cast<std::size_t>(t)] = prod;
  }
  const int stride = p.train_timesteps / p.inference_steps;
  std::vector<int> timesteps(static_cast<std::size_t>(p.inference_steps));
  for (int i = 0; i < p.inference_steps; ++i) timesteps[static_cast<std::size_t>(i)] = p.train_timesteps - 1 - i * stride;
  return NoiseSchedule(std::move(alpha_bar), std::move(timesteps));
}

Tensor noise_with_alpha(const Tensor& x0, const Tensor& epsilon, double alpha_bar) {
  require_same_shape(x0, epsilon, "add_noise");
  const double a = std::sqrt(alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar);
  Tensor out(x0.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * epsilon[i];
  return out;
}

Tensor predict_x0_with_alpha(const Tensor& x_t, const Tensor& eps_pred, double alpha_bar) {
  require_same_shape(x_t, eps_pred, "predict_x0");
  if (!(alpha_bar > 0.0)) throw DomainError("predict_x0: alpha_bar is zero (pure-noise singularity)");
  const double a = std::sqrt(alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar);
  Tensor out(x_t.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - b * eps_pred[i]) / a;
  return out;
}

Tensor ddim_with_alpha(const Tensor& x0_pred, const Tensor& eps_pred, double alpha_bar_prev) {
  return noise_with_alpha(x0_pred, eps_pred, alpha_bar_prev);
}

Latent add_noise(const Latent& x0, const Tensor& epsilon, int t, const NoiseSchedule& schedule) {
  return {noise_with_alpha(x0.values, epsilon, schedule.alpha_bar_at(t)), t};
}

Latent predict_x0(const Latent& x_t, const Tensor& eps_pred, int t, const NoiseSchedule& schedule) {
  return {predict_x0_with_alpha(x_t.values, eps_pred, schedule.alpha_bar_at(t)), 0};
}

Latent ddim_step(const Latent& x_t, const Tensor& eps_pred, int t, int t_prev, const NoiseSchedule& schedule) {
  if (t_prev != kTerminalTimestep && !(t_prev < t)) throw DomainError("ddim_step: t_prev must precede t");
  const Tensor f = predict_x0_with_alpha(x_t.values, eps_pred, schedule.alpha_bar_at(t));
  return {ddim_with_alpha(f, eps_pred, schedule.alpha_bar_at(t_prev)), t_prev};
}

}  // namespace agile
