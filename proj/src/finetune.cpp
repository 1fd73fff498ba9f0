#include "agile/finetune.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace agile {

AdamOptimizer::AdamOptimizer(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(epsilon) {
  if (!(learning_rate > 0.0)) throw ConfigError("adam: learning rate must be > 0");
}

void AdamOptimizer::step(std::vector<NamedTensor>& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size()) throw ShapeError("adam: gradient count does not match parameters");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.shape);
      v_.emplace_back(p.value.shape);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].value.data;
    const auto& g = grads[k].data;
    auto& m = m_[k].data;
    auto& v = v_[k].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1_ * m[i] + (1 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1 - b2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

double noise_prediction_loss(const Backbone& backbone, const Tensor& x0, const Tensor& noise, int timestep,
                             const NoiseSchedule& schedule, const TextEmbedding& e, const ConditioningInput& cond,
                             std::vector<Tensor>* param_grads, const MapGrid* object_mask, double attention_weight,
                             AttentionHooks* hooks) {
  require_same_shape(x0, noise, "noise_prediction_loss");
  const Tensor x_t = add_noise({x0, 0}, noise, timestep, schedule).values;
  const bool track = param_grads != nullptr;
  const ForwardResult fr = backbone.forward(x_t, timestep, ag::constant(e.tokens), cond, hooks, track);
  ag::Var loss =
      ag::scale(ag::sum_squares(ag::sub(fr.eps, ag::constant(noise))), 1.0 / static_cast<double>(noise.size()));
  if (object_mask != nullptr && attention_weight > 0.0) {
    std::vector<ag::Var> terms{loss};
    for (const auto& layer : fr.attention) {
      const MapGrid target = resample_grid(*object_mask, {layer.site.height, layer.site.width});
      const ag::Var diff = ag::sub(head_mean_token_map(layer, TextEmbedding::kObjectToken),
                                   ag::constant(Tensor({target.height, target.width}, target.values)));
      terms.push_back(ag::scale(ag::sum_squares(diff), attention_weight / static_cast<double>(target.size())));
    }
    loss = ag::add_n(terms);
  }
  if (track) {
    ag::backward(loss);
    if (param_grads->empty()) {
      for (const auto& p : fr.params) param_grads->emplace_back(p.shape());
    }
    for (std::size_t k = 0; k < fr.params.size(); ++k) {
      const Tensor& g = fr.params[k].grad();
      auto& acc = (*param_grads)[k].data;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }
  }
  return loss.value()[0];
}

std::pair<double, Tensor> noise_prediction_loss_embedding_grad(const Backbone& backbone, const Tensor& x0,
                                                               const Tensor& noise, int timestep,
                                                               const NoiseSchedule& schedule, const TextEmbedding& e,
                                                               const ConditioningInput& cond) {
  require_same_shape(x0, noise, "noise_prediction_loss");
  const Tensor x_t = add_noise({x0, 0}, noise, timestep, schedule).values;
  const ag::Var emb = ag::leaf(e.tokens, true);
  const ForwardResult fr = backbone.forward(x_t, timestep, emb, cond, nullptr, false);
  const ag::Var loss =
      ag::scale(ag::sum_squares(ag::sub(fr.eps, ag::constant(noise))), 1.0 / static_cast<double>(noise.size()));
  ag::backward(loss);
  return {loss.value()[0], emb.grad()};
}

double finetune_step(Backbone& backbone, AdamOptimizer& optimizer, const std::vector<TrainingPair>& batch,
                     const TextEmbedding& e, const NoiseSchedule& schedule, const FinetuneConfig& config,
                     std::uint64_t step_seed) {
  if (batch.empty()) throw ConfigError("finetune_step: empty batch");
  std::mt19937_64 rng(step_seed);
  std::uniform_int_distribution<int> pick_t(0, schedule.train_timesteps() - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Tensor> grads;
  double total = 0.0;
  for (const auto& pair : batch) {
    const Tensor x0 = backbone.encode_image(pair.image);
    Tensor noise(x0.shape);
    for (auto& v : noise.data) v = gauss(rng);
    const int t = pick_t(rng);
    const std::uint64_t aug_seed = rng();
    const Tensor cond = config.augment ? augment(pair.condition, aug_seed) : pair.condition;
    const bool guided = pair.guide && unit(rng) < config.guided_fraction;
    const MapGrid* mask = pair.object_mask && !guided ? &*pair.object_mask : nullptr;
    std::optional<GuidanceHook> hook;
    if (guided) {
      GuidanceConfig g;
      g.stop_step = std::numeric_limits<int>::max();
      g.target_layers = backbone.decoder_cross_attention_layers();
      hook.emplace(g, *pair.guide);
    }
    total += noise_prediction_loss(backbone, x0, noise, t, schedule, pair.prompt ? *pair.prompt : e,
                                   {cond, config.control_scale}, &grads, mask, config.attention_weight,
                                   hook ? &*hook : nullptr);
  }
  const double n = static_cast<double>(batch.size());
  for (auto& g : grads)
    for (auto& v : g.data) v /= n;
  const double loss = total / n;
  if (!std::isfinite(loss)) throw NumericError("finetune_step: non-finite loss");
  optimizer.step(backbone.parameters(), grads);
  return loss;
}

namespace {

template <typename MakePair>
FinetuneResult train_loop(Backbone& backbone, std::size_t pool, const TextEmbedding& e, const NoiseSchedule& schedule,
                          const FinetuneConfig& config, MakePair make_pair) {
  if (config.batch_size < 1) throw ConfigError("finetune: batch_size must be >= 1");
  if (config.max_steps < 0) throw ConfigError("finetune: max_steps must be >= 0");
  AdamOptimizer adam(config.learning_rate);
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
  FinetuneResult result;
  double running = 0.0;
  for (int step = 0; step < config.max_steps; ++step) {
    std::vector<TrainingPair> batch;
    for (int b = 0; b < config.batch_size; ++b) batch.push_back(make_pair(pick(rng)));
    const double loss = finetune_step(backbone, adam, batch, e, schedule, config, rng());
    result.loss_curve.push_back(loss);
    result.steps = step + 1;
    running = step == 0 ? loss : 0.9 * running + 0.1 * loss;
    if (config.loss_threshold > 0.0 && step >= 10 && running < config.loss_threshold) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

}  // namespace

FinetuneResult finetune_domain(Backbone& backbone, const DomainDataset& dataset, const TextEmbedding& e,
                               const NoiseSchedule& schedule, const FinetuneConfig& config) {
  if (dataset.images.empty()) throw ConfigError("finetune: dataset '" + dataset.name + "' is empty");
  return train_loop(backbone, dataset.images.size(), e, schedule, config, [&](std::size_t i) {
    const auto& img = dataset.images[i].image;
    return TrainingPair{img, img, std::nullopt, std::nullopt, std::nullopt};
  });
}

FinetuneResult pretrain_captioned(Backbone& backbone, const std::vector<CaptionedImage>& corpus,
                                  const NoiseSchedule& schedule, const FinetuneConfig& config) {
  if (corpus.empty()) throw ConfigError("pretrain: empty corpus");
  FinetuneConfig cfg = config;
  cfg.control_scale = 0.0;
  cfg.augment = false;
  std::vector<TextEmbedding> prompts;
  std::vector<MapGrid> masks;
  std::vector<QueryAttentionMap> queries;
  prompts.reserve(corpus.size());
  for (const auto& c : corpus) {
    prompts.push_back(backbone.text_encode(c.prompt));
    queries.push_back(build_query_map(c.image.boxes, c.image.size(), c.image.size()));
    masks.push_back(queries.back().grid);
  }
  return train_loop(backbone, corpus.size(), prompts[0], schedule, cfg, [&](std::size_t i) {
    const auto& img = corpus[i].image.image;
    return TrainingPair{img, img, prompts[i], masks[i], queries[i]};
  });
}

}  // namespace agile
