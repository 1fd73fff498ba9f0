#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "agile/backbone.hpp"
#include "agile/querymap.hpp"
#include "agile/scheduler.hpp"

namespace agile {

struct TextOptConfig {
  double learning_rate = 1e-2;
  int max_steps = 200;
  int opt_step = 30;  // denoising step index whose attention is matched
  std::uint64_t seed = 0;
  double sigma_scale = 0.5;
  double control_scale = 1.0;
};

struct OptimizationState {
  TextEmbedding embedding;
  int step = 0;
  std::vector<double> loss_history;
  TextOptConfig config;
};

// Attention-matching objective over a fixed set of labeled images. The noise
// drawn for each image is fixed at construction.
class AttentionObjective {
 public:
  AttentionObjective(const Backbone& backbone, const NoiseSchedule& schedule, std::vector<LabeledImage> images,
                     const TextOptConfig& config);

  // (1/N) sum_i ||M(x_t | e, I_i) - M_s(I_i)||^2 where M is the token-0 map averaged
  // over every decoder layer and head. Evaluated through an AttentionRecorder.
  double loss(const TextEmbedding& e) const;
  // Same objective on the autodiff graph; gradient w.r.t. token row 0 only.
  std::pair<double, Tensor> loss_and_grad(const TextEmbedding& e) const;

  std::size_t image_count() const { return samples_.size(); }

 private:
  struct Sample {
    Tensor noisy;
    Tensor condition;
    QueryAttentionMap target;  // at the image resolution
  };

  const Backbone& backbone_;
  int timestep_;
  double control_scale_;
  std::vector<Sample> samples_;
};

double attention_loss(const TextEmbedding& e, const std::vector<LabeledImage>& images, const Backbone& backbone,
                      const NoiseSchedule& schedule, const TextOptConfig& config);

struct OptimizationResult {
  TextEmbedding best;
  double best_loss = 0.0;
  OptimizationState state;
  std::vector<std::string> warnings;
};

// Gradient descent on token row 0; rows 1.. stay frozen. Returns the embedding
// with the lowest recorded loss.
OptimizationResult optimize_embedding(const TextEmbedding& e0, const std::vector<LabeledImage>& images,
                                      const Backbone& backbone, const NoiseSchedule& schedule,
                                      const TextOptConfig& config);

}  // namespace agile
