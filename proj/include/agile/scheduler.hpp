#pragma once

#include <vector>

#include "agile/tensor.hpp"

namespace agile {

// Marks the step after the last inference timestep, where alpha_bar is 1.
inline constexpr int kTerminalTimestep = -1;

struct ScheduleParams {
  int train_timesteps = 1000;
  int inference_steps = 50;
  double beta_min = 8.5e-4;
  double beta_max = 1.2e-2;
};

class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  // Validates monotonicity and the timestep map.
  NoiseSchedule(std::vector<double> alpha_bar, std::vector<int> inference_timesteps);

  int train_timesteps() const { return static_cast<int>(alpha_bar_.size()); }
  int inference_steps() const { return static_cast<int>(timesteps_.size()); }
  const std::vector<double>& alpha_bar() const { return alpha_bar_; }
  // Strictly decreasing training timesteps; entry i is used at denoising step i.
  const std::vector<int>& inference_timesteps() const { return timesteps_; }

  // alpha_bar[t], or 1 for kTerminalTimestep.
  double alpha_bar_at(int t) const;
  int timestep_for_step(int step) const;
  // Training timestep reached after `step`, kTerminalTimestep after the last one.
  int previous_timestep(int step) const;

 private:
  std::vector<double> alpha_bar_;
  std::vector<int> timesteps_;
};

NoiseSchedule make_schedule(const ScheduleParams& params);

struct Latent {
  Tensor values;
  int timestep = 0;
};

// x_t = sqrt(ab) x0 + sqrt(1 - ab) eps
Tensor noise_with_alpha(const Tensor& x0, const Tensor& epsilon, double alpha_bar);
// f = (x_t - sqrt(1 - ab) eps) / sqrt(ab)
Tensor predict_x0_with_alpha(const Tensor& x_t, const Tensor& eps_pred, double alpha_bar);
// Deterministic (eta = 0) DDIM update given the predicted clean sample.
Tensor ddim_with_alpha(const Tensor& x0_pred, const Tensor& eps_pred, double alpha_bar_prev);

Latent add_noise(const Latent& x0, const Tensor& epsilon, int t, const NoiseSchedule& schedule);
Latent predict_x0(const Latent& x_t, const Tensor& eps_pred, int t, const NoiseSchedule& schedule);
Latent ddim_step(const Latent& x_t, const Tensor& eps_pred, int t, int t_prev, const NoiseSchedule& schedule);

}  // namespace agile
