#include "agile/textopt.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "agile/attention.hpp"

namespace agile {

namespace {

Tensor standard_normal(const std::vector<int>& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(shape);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

Tensor row(const Tensor& m, int r) {
  const int d = m.dim(1);
  return Tensor({1, d}, std::vector<double>(m.data.begin() + static_cast<std::ptrdiff_t>(r) * d,
                                            m.data.begin() + static_cast<std::ptrdiff_t>(r + 1) * d));
}

Tensor rows_from(const Tensor& m, int first) {
  const int d = m.dim(1);
  return Tensor({m.dim(0) - first, d},
                std::vector<double>(m.data.begin() + static_cast<std::ptrdiff_t>(first) * d, m.data.end()));
}

}  // namespace

AttentionObjective::AttentionObjective(const Backbone& backbone, const NoiseSchedule& schedule,
                                       std::vector<LabeledImage> images, const TextOptConfig& config)
    : backbone_(backbone), timestep_(schedule.timestep_for_step(config.opt_step)), control_scale_(config.control_scale) {
  if (images.empty()) throw ConfigError("attention_loss: no images");
  const double ab = schedule.alpha_bar_at(timestep_);
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto& li = images[i];
    if (li.boxes.empty()) throw ConfigError("attention_loss: image '" + li.identifier + "' has no boxes");
    const Tensor x0 = backbone.encode_image(li.image);
    const Tensor eps = standard_normal(x0.shape, config.seed * 1000003ULL + i);
    samples_.push_back({noise_with_alpha(x0, eps, ab), li.image,
                        build_query_map(li.boxes, li.size(), li.size(), config.sigma_scale)});
  }
}

double AttentionObjective::loss(const TextEmbedding& e) const {
  const auto layers = backbone_.decoder_cross_attention_layers();
  double total = 0.0;
  for (const auto& s : samples_) {
    AttentionRecorder rec;
    backbone_.denoise({s.noisy, timestep_}, e, {s.condition, control_scale_}, &rec);
    const auto agg = aggregate_token_map(rec.record(), TextEmbedding::kObjectToken, layers, timestep_);
    const auto target = resample_map(s.target, {agg.mean.height, agg.mean.width});
    double sq = 0.0;
    for (std::size_t i = 0; i < agg.mean.size(); ++i) {
      const double d = agg.mean.values[i] - target.grid.values[i];
      sq += d * d;
    }
    total += sq;
  }
  return total / static_cast<double>(samples_.size());
}

std::pair<double, Tensor> AttentionObjective::loss_and_grad(const TextEmbedding& e) const {
  using namespace ag;
  const Var object_row = leaf(row(e.tokens, TextEmbedding::kObjectToken), true);
  const Var embedding = concat_rows(object_row, constant(rows_from(e.tokens, 1)));
  std::vector<Var> terms;
  for (const auto& s : samples_) {
    const ForwardResult fr = backbone_.forward(s.noisy, timestep_, embedding, {s.condition, control_scale_}, nullptr, false);
    int out_h = 0, out_w = 0;
    for (const auto& layer : fr.attention) {
      if (layer.site.height * layer.site.width > out_h * out_w) {
        out_h = layer.site.height;
        out_w = layer.site.width;
      }
    }
    std::vector<Var> layer_maps;
    for (const auto& layer : fr.attention) {
      layer_maps.push_back(resize_bilinear(head_mean_token_map(layer, TextEmbedding::kObjectToken), out_h, out_w));
    }
    const Var mean_map = scale(add_n(layer_maps), 1.0 / static_cast<double>(layer_maps.size()));
    const auto target = resample_map(s.target, {out_h, out_w});
    terms.push_back(sum_squares(sub(mean_map, constant(Tensor({out_h, out_w}, target.grid.values)))));
  }
  const Var total = scale(add_n(terms), 1.0 / static_cast<double>(terms.size()));
  backward(total);
  return {total.value()[0], object_row.grad()};
}

double attention_loss(const TextEmbedding& e, const std::vector<LabeledImage>& images, const Backbone& backbone,
                      const NoiseSchedule& schedule, const TextOptConfig& config) {
  return AttentionObjective(backbone, schedule, images, config).loss(e);
}

OptimizationResult optimize_embedding(const TextEmbedding& e0, const std::vector<LabeledImage>& images,
                                      const Backbone& backbone, const NoiseSchedule& schedule,
                                      const TextOptConfig& config) {
  if (images.empty()) throw ConfigError("optimize_embedding: no images");
  if (config.max_steps < 0) throw ConfigError("optimize_embedding: max_steps must be >= 0");
  OptimizationResult result;
  if (images.size() < 5) {
    result.warnings.push_back("only " + std::to_string(images.size()) +
                              " labeled images; at least 5 are needed for a reliable embedding");
  }
  const AttentionObjective objective(backbone, schedule, images, config);
  result.state.embedding = e0;
  result.state.config = config;
  result.best = e0;
  result.best_loss = std::numeric_limits<double>::infinity();

  const int d = e0.dim();
  for (int step = 0; step < config.max_steps; ++step) {
    auto [loss, grad] = objective.loss_and_grad(result.state.embedding);
    if (!std::isfinite(loss) || !all_finite(grad)) {
      throw NumericError("optimize_embedding: non-finite loss at step " + std::to_string(step));
    }
    result.state.loss_history.push_back(loss);
    if (loss < result.best_loss) {
      result.best_loss = loss;
      result.best = result.state.embedding;
    }
    for (int k = 0; k < d; ++k) result.state.embedding.tokens[static_cast<std::size_t>(k)] -= config.learning_rate * grad[static_cast<std::size_t>(k)];
    result.state.step = step + 1;
  }
  if (config.max_steps == 0) result.best_loss = objective.loss(e0);
  return result;
}

}  // namespace agile
