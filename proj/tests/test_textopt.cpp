#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "agile/textopt.hpp"
#include "agile/toy_backbone.hpp"
#include "support.hpp"

using namespace agile;
using namespace agile::testing;

namespace {

// Test double whose single decoder layer attends token 0 with the condition
// image's first channel, independent of the embedding.
class ScriptedBackbone final : public Backbone {
 public:
  explicit ScriptedBackbone(int size) : size_(size) {}
  ImageSize image_size() const override { return {size_, size_}; }
  std::vector<int> latent_shape() const override { return {3, size_, size_}; }
  int vocabulary_size() const override { return 4; }
  int n_tokens() const override { return 2; }
  std::vector<int> decoder_cross_attention_layers() const override { return {0}; }
  Tensor encode_image(const Tensor& image) const override { return image; }
  Tensor decode_latent(const Tensor& latent) const override { return latent; }
  TextEmbedding text_encode(const std::vector<int>&) const override { return {Tensor({2, 2}, {1, 0, 0, 1})}; }
  ForwardResult forward(const Tensor& x_t, int timestep, const ag::Var& embedding, const ConditioningInput& cond,
                        AttentionHooks* hooks, bool) const override {
    const int n = size_ * size_;
    Tensor heads({n, 2});
    for (int q = 0; q < n; ++q) {
      heads[static_cast<std::size_t>(2 * q)] = cond.condition_image[static_cast<std::size_t>(q)];
      heads[static_cast<std::size_t>(2 * q + 1)] = 1.0 - cond.condition_image[static_cast<std::size_t>(q)];
    }
    const AttentionSite site{0, timestep, size_, size_};
    if (hooks) {
      if (auto edited = hooks->on_attention(site, {heads})) heads = (*edited)[0];
    }
    ForwardResult fr;
    // Zero noise prediction that still touches the embedding so the graph is connected.
    fr.eps = ag::scale_by(ag::constant(Tensor(x_t.shape, 0.0)), ag::sum(embedding));
    fr.attention.push_back({site, {ag::constant(heads)}});
    return fr;
  }
  std::vector<NamedTensor>& parameters() override { return params_; }
  const std::vector<NamedTensor>& parameters() const override { return params_; }

 private:
  int size_;
  std::vector<NamedTensor> params_;
};

LabeledImage scripted_image(int size, const std::vector<double>& channel0, std::vector<BoundingBox> boxes) {
  LabeledImage li;
  li.image = Tensor({3, size, size}, 0.0);
  std::copy(channel0.begin(), channel0.end(), li.image.data.begin());
  li.boxes = std::move(boxes);
  li.identifier = "scripted";
  return li;
}

std::vector<LabeledImage> toy_images(int n, std::uint64_t seed) {
  std::vector<LabeledImage> out;
  for (int i = 0; i < n; ++i) {
    LabeledImage li;
    li.image = random_image(16, seed + i);
    li.boxes = {{2.0 + i, 3.0, 6.0, 5.0, 0}};
    li.identifier = "img" + std::to_string(i);
    out.push_back(li);
  }
  return out;
}

}  // namespace

TEST_CASE("loss examples on a scripted backbone") {
  const auto sched = make_schedule({});
  const ScriptedBackbone one(1);
  const TextEmbedding e = one.text_encode({});
  TextOptConfig cfg;
  const BoundingBox whole{0, 0, 1, 1, 0};
  CHECK(attention_loss(e, {scripted_image(1, {0.5}, {whole})}, one, sched, cfg) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(attention_loss(e, {scripted_image(1, {1.0 - std::sqrt(0.2)}, {whole}), scripted_image(1, {1.0 - std::sqrt(0.4)}, {whole})},
                       one, sched, cfg) == doctest::Approx(0.3).epsilon(1e-12));

  const ScriptedBackbone grid(8);
  const std::vector<BoundingBox> boxes{{1, 2, 4, 3, 0}};
  const auto q = build_query_map(boxes, {8, 8}, {8, 8}, cfg.sigma_scale);
  CHECK(attention_loss(e, {scripted_image(8, q.grid.values, boxes)}, grid, sched, cfg) == 0.0);
}

TEST_CASE("stationary start keeps e0 and empty runs return e0") {
  const auto sched = make_schedule({});
  const ScriptedBackbone grid(8);
  const TextEmbedding e0 = grid.text_encode({});
  const std::vector<BoundingBox> boxes{{1, 2, 4, 3, 0}};
  std::vector<LabeledImage> imgs;
  for (int i = 0; i < 5; ++i) imgs.push_back(scripted_image(8, build_query_map(boxes, {8, 8}, {8, 8}).grid.values, boxes));
  TextOptConfig cfg;
  cfg.max_steps = 5;
  const auto r = optimize_embedding(e0, imgs, grid, sched, cfg);
  CHECK(r.best == e0);
  CHECK(r.best_loss == 0.0);

  const ToyBackbone toy(ToyBackboneConfig{});
  cfg.max_steps = 0;
  const auto empty = optimize_embedding(toy.text_encode({2, 17}), toy_images(5, 1), toy, sched, cfg);
  CHECK(empty.best == toy.text_encode({2, 17}));
  CHECK(empty.state.loss_history.empty());
  CHECK(empty.state.step == 0);
}

TEST_CASE("input checks and the five-image warning") {
  const auto sched = make_schedule({});
  const ToyBackbone toy(ToyBackboneConfig{});
  const auto e0 = toy.text_encode({2, 17});
  TextOptConfig cfg;
  cfg.max_steps = 1;
  auto imgs = toy_images(3, 2);
  CHECK(optimize_embedding(e0, imgs, toy, sched, cfg).warnings.size() == 1);
  CHECK(optimize_embedding(e0, toy_images(5, 2), toy, sched, cfg).warnings.empty());
  imgs[1].boxes.clear();
  CHECK_THROWS_AS(attention_loss(e0, imgs, toy, sched, cfg), ConfigError);
  CHECK_THROWS_AS(optimize_embedding(e0, {}, toy, sched, cfg), ConfigError);
}

TEST_CASE("analytic token-0 gradient matches central differences") {
  const auto sched = make_schedule({});
  ToyBackbone toy(ToyBackboneConfig{});
  std::uint64_t seed = 50;
  for (auto& p : toy.parameters()) {
    const Tensor n = random_tensor(p.value.shape, seed++, -0.05, 0.05);
    for (std::size_t i = 0; i < n.size(); ++i) p.value[i] += n[i];
  }
  TextOptConfig cfg;
  const AttentionObjective obj(toy, sched, toy_images(3, 10), cfg);
  const TextEmbedding e = toy.text_encode({2, 17});
  const auto [loss, grad] = obj.loss_and_grad(e);
  CHECK(loss == doctest::Approx(obj.loss(e)).epsilon(1e-10));
  REQUIRE(grad.size() == static_cast<std::size_t>(e.dim()));

  const double h = 1e-3;
  double worst = 0.0;
  const Tensor dir = random_tensor({e.dim()}, 77);
  auto at = [&](double step, int k) {
    TextEmbedding m = e;
    if (k < 0) {
      for (int j = 0; j < e.dim(); ++j) m.tokens[static_cast<std::size_t>(j)] += step * dir[static_cast<std::size_t>(j)];
    } else {
      m.tokens[static_cast<std::size_t>(k)] += step;
    }
    return obj.loss(m);
  };
  const double numeric_dir = (at(h, -1) - at(-h, -1)) / (2 * h);
  worst = relative_error(dot(grad, dir), numeric_dir);
  MESSAGE("directional: analytic " << dot(grad, dir) << " numeric " << numeric_dir);
  CHECK(worst <= 1e-3);
  // Coordinates with a non-negligible gradient.
  const double scale = std::sqrt(dot(grad, grad));
  for (int k = 0; k < e.dim(); ++k) {
    if (std::abs(grad[static_cast<std::size_t>(k)]) < 0.05 * scale) continue;
    const double numeric = (at(h, k) - at(-h, k)) / (2 * h);
    CHECK(relative_error(grad[static_cast<std::size_t>(k)], numeric) <= 1e-3);
  }
}

TEST_CASE("frozen rows, best-so-far and determinism") {
  const auto sched = make_schedule({});
  const ToyBackbone toy(ToyBackboneConfig{});
  const auto e0 = toy.text_encode({2, 17});
  TextOptConfig cfg;
  cfg.max_steps = 12;
  cfg.learning_rate = 0.05;
  const auto imgs = toy_images(5, 30);
  const auto r = optimize_embedding(e0, imgs, toy, sched, cfg);
  const int d = e0.dim();
  CHECK(std::equal(r.best.tokens.data.begin() + d, r.best.tokens.data.end(), e0.tokens.data.begin() + d));
  CHECK(std::equal(r.state.embedding.tokens.data.begin() + d, r.state.embedding.tokens.data.end(),
                   e0.tokens.data.begin() + d));
  CHECK(r.state.loss_history.size() == 12);
  CHECK(r.state.step == 12);
  const double min_loss = *std::min_element(r.state.loss_history.begin(), r.state.loss_history.end());
  CHECK(std::abs(r.best_loss - min_loss) < 1e-9);
  CHECK(std::abs(attention_loss(r.best, imgs, toy, sched, cfg) - min_loss) < 1e-9);
  CHECK(r.state.loss_history.back() < r.state.loss_history.front());

  const auto again = optimize_embedding(e0, imgs, toy, sched, cfg);
  CHECK(again.best == r.best);
  CHECK(again.state.loss_history == r.state.loss_history);
}
