#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "agile/attention.hpp"
#include "agile/backbone.hpp"
#include "agile/data.hpp"
#include "agile/scheduler.hpp"

namespace agile {

struct FinetuneConfig {
  int max_steps = 500;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double loss_threshold = 0.0;  // stop early once the running loss drops below; 0 disables
  double control_scale = 1.0;
  bool augment = true;  // augment the condition image
  double attention_weight = 0.0;  // weight of the token-0 attention term for pairs carrying a mask
  double guided_fraction = 0.0;   // share of pairs with a guide query that are run under guidance
  std::uint64_t seed = 0;
};

struct TrainingPair {
  Tensor image;      // reconstruction target, {3, H, W}
  Tensor condition;  // conditioning image, {3, H, W}
  std::optional<TextEmbedding> prompt;  // overrides the batch embedding
  std::optional<MapGrid> object_mask;   // image-resolution target map for the attention term
  std::optional<QueryAttentionMap> guide;  // query map for guided training passes
};

// Adam over every backbone parameter.
class AdamOptimizer {
 public:
  AdamOptimizer(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);
  void step(std::vector<NamedTensor>& params, const std::vector<Tensor>& grads);
  int steps_taken() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Mean-squared noise-prediction error of one sample; differentiable w.r.t. the
// parameters when track_params is set.
double noise_prediction_loss(const Backbone& backbone, const Tensor& x0, const Tensor& noise, int timestep,
                             const NoiseSchedule& schedule, const TextEmbedding& e, const ConditioningInput& cond,
                             std::vector<Tensor>* param_grads = nullptr, const MapGrid* object_mask = nullptr,
                             double attention_weight = 0.0, AttentionHooks* hooks = nullptr);

// Same loss without the attention term, with its gradient w.r.t. every
// embedding entry ({n_tokens, d_embed}).
std::pair<double, Tensor> noise_prediction_loss_embedding_grad(const Backbone& backbone, const Tensor& x0,
                                                               const Tensor& noise, int timestep,
                                                               const NoiseSchedule& schedule, const TextEmbedding& e,
                                                               const ConditioningInput& cond);

// One optimizer update on `batch`: random timestep and noise per sample, loss
// averaged over the batch. Returns the batch loss before the update.
double finetune_step(Backbone& backbone, AdamOptimizer& optimizer, const std::vector<TrainingPair>& batch,
                     const TextEmbedding& e, const NoiseSchedule& schedule, const FinetuneConfig& config,
                     std::uint64_t step_seed);

struct FinetuneResult {
  std::vector<double> loss_curve;
  int steps = 0;
  bool stopped_early = false;
};

// Fine-tunes on a domain; each image serves as its own condition.
FinetuneResult finetune_domain(Backbone& backbone, const DomainDataset& dataset, const TextEmbedding& e,
                               const NoiseSchedule& schedule, const FinetuneConfig& config);

// Text-to-image training on captioned images with the conditioning branch off.
// Produces the base model that domain fine-tuning starts from. With
// config.attention_weight > 0 the token-0 maps of every decoder layer are also
// pulled toward the query map of the true box, and with config.guided_fraction > 0 that share
// of samples is denoised under attention guidance toward the true box. Both
// stand in for the word-region correspondence a large pretrained model has.
FinetuneResult pretrain_captioned(Backbone& backbone, const std::vector<CaptionedImage>& corpus,
                                  const NoiseSchedule& schedule, const FinetuneConfig& config);

}  // namespace agile
