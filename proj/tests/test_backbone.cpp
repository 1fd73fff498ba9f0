#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <functional>

#include "agile/attention.hpp"
#include "agile/autograd.hpp"
#include "agile/finetune.hpp"
#include "agile/toy_backbone.hpp"
#include "support.hpp"

using namespace agile;
using namespace agile::testing;

namespace {

// Multiplies every map by 1 and hands the result back as an edit.
class UnitEditHook final : public AttentionHooks {
 public:
  int calls = 0;
  std::optional<std::vector<Tensor>> on_attention(const AttentionSite&, const std::vector<Tensor>& heads) override {
    ++calls;
    std::vector<Tensor> out = heads;
    for (auto& h : out)
      for (auto& v : h.data) v *= 1.0;
    return out;
  }
};

ToyBackbone trained_looking_backbone() {
  // Zero-initialized projections hide the conditioning branch at init, so
  // perturb every parameter to exercise all paths.
  ToyBackbone b(ToyBackboneConfig{});
  std::uint64_t seed = 100;
  for (auto& p : b.parameters()) {
    const Tensor noise = random_tensor(p.value.shape, seed++, -0.05, 0.05);
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] += noise[i];
  }
  return b;
}


}  // namespace

TEST_CASE("text encoding is deterministic, bounded by the vocabulary and puts the first word in row 0") {
  const ToyBackbone b(ToyBackboneConfig{});
  CHECK(b.text_encode({2, 17}) == b.text_encode({2, 17}));
  CHECK_NOTHROW(b.text_encode({b.vocabulary_size() - 1}));
  CHECK_THROWS_AS(b.text_encode({b.vocabulary_size()}), DomainError);
  CHECK_THROWS_AS(b.text_encode({-1}), DomainError);
  const auto a = b.text_encode({5, 17}), c = b.text_encode({5, 18}), d = b.text_encode({6, 17});
  const int dim = a.dim();
  CHECK(std::equal(a.tokens.data.begin(), a.tokens.data.begin() + dim, c.tokens.data.begin()));
  CHECK_FALSE(std::equal(a.tokens.data.begin(), a.tokens.data.begin() + dim, d.tokens.data.begin()));
  CHECK(a.n_tokens() == b.n_tokens());
}

TEST_CASE("identity codec") {
  const ToyBackbone b(ToyBackboneConfig{});
  const Tensor img = random_image(16, 1);
  const Tensor lat = b.encode_image(img);
  CHECK(lat.shape == b.latent_shape());
  CHECK(b.decode_latent(lat).data == img.data);
  for (double v : b.encode_image(Tensor({3, 16, 16}, 0.0)).data) CHECK(v == 0.0);
  Tensor bad = img;
  bad[3] = 1.5;
  CHECK_THROWS_AS(b.encode_image(bad), DomainError);
  CHECK_THROWS_AS(b.encode_image(Tensor({3, 8, 8}, 0.5)), ShapeError);
}

TEST_CASE("decoder layers are ordered from the coarsest grid outward") {
  const ToyBackbone b(ToyBackboneConfig{});
  CHECK(b.decoder_cross_attention_layers() == std::vector<int>{0, 1, 2});
  CHECK(b.decoder_cross_attention_layers() == b.decoder_cross_attention_layers());
  AttentionRecorder rec;
  b.denoise({random_tensor({3, 16, 16}, 2), 500}, b.text_encode({2, 17}), {random_image(16, 3), 1.0}, &rec);
  CHECK(rec.record().layer_shapes.at(0).height == 4);
  CHECK(rec.record().layer_shapes.at(1).height == 8);
  CHECK(rec.record().layer_shapes.at(2).height == 16);
  CHECK(rec.record().head_count(0, 500) == 4);
}

TEST_CASE("hooks never perturb the prediction unless they edit") {
  const ToyBackbone b = trained_looking_backbone();
  const Latent x{random_tensor({3, 16, 16}, 4), 700};
  const auto e = b.text_encode({2, 17});
  const ConditioningInput cond{random_image(16, 5), 1.0};
  const Tensor plain = b.denoise(x, e, cond);
  AttentionRecorder rec;
  CHECK(b.denoise(x, e, cond, &rec).data == plain.data);
  UnitEditHook unit;
  CHECK(b.denoise(x, e, cond, &unit).data == plain.data);
  CHECK(unit.calls == 3);
}

TEST_CASE("recorded attention rows sum to one") {
  const ToyBackbone b = trained_looking_backbone();
  AttentionRecorder rec;
  b.denoise({random_tensor({3, 16, 16}, 6), 300}, b.text_encode({1, 16, 30}), {random_image(16, 7), 1.0}, &rec);
  for (const auto& [key, m] : rec.record().entries) {
    for (int q = 0; q < m.dim(0); ++q) {
      double s = 0.0;
      for (int j = 0; j < m.dim(1); ++j) {
        CHECK(m[static_cast<std::size_t>(q) * m.dim(1) + j] >= 0.0);
        s += m[static_cast<std::size_t>(q) * m.dim(1) + j];
      }
      CHECK(std::abs(s - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("control scale 0 makes the prediction independent of the condition") {
  const ToyBackbone b = trained_looking_backbone();
  const Latent x{random_tensor({3, 16, 16}, 8), 400};
  const auto e = b.text_encode({2, 17});
  CHECK(b.denoise(x, e, {random_image(16, 9), 0.0}).data == b.denoise(x, e, {random_image(16, 10), 0.0}).data);
  CHECK(b.denoise(x, e, {random_image(16, 9), 1.0}).data != b.denoise(x, e, {random_image(16, 10), 1.0}).data);
  CHECK_THROWS_AS(b.denoise(x, e, {random_image(16, 9), -1.0}), ConfigError);
}

TEST_CASE("checkpoint round trip keeps float32 values") {
  const ToyBackbone b = trained_looking_backbone();
  const auto dir = std::filesystem::temp_directory_path() / "agile_test_backbone_ckpt";
  b.save(dir);
  const ToyBackbone back = ToyBackbone::load(dir);
  REQUIRE(back.parameters().size() == b.parameters().size());
  for (std::size_t k = 0; k < b.parameters().size(); ++k) {
    const auto& p = b.parameters()[k].value;
    const auto& q = back.parameters()[k].value;
    REQUIRE(p.shape == q.shape);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(q[i] == static_cast<double>(static_cast<float>(p[i])));
  }
  CHECK(back.config().text_gain == b.config().text_gain);
}

TEST_CASE("autograd ops match central differences") {
  const Tensor a0 = random_tensor({3, 4}, 11), b0 = random_tensor({4, 5}, 12), w = random_tensor({3, 5}, 13);
  // f(a) = sum(softmax(a b) * w)
  auto f = [&](const Tensor& a) {
    return ag::sum(ag::mul(ag::softmax_rows(ag::matmul(ag::constant(a), ag::constant(b0))), ag::constant(w)))
        .value()[0];
  };
  const ag::Var a = ag::leaf(a0, true);
  ag::backward(ag::sum(ag::mul(ag::softmax_rows(ag::matmul(a, ag::constant(b0))), ag::constant(w))));
  const Tensor dir = random_tensor({3, 4}, 14);
  const double numeric = directional_fd([&](double h) {
    Tensor x = a0;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += h * dir[i];
    return f(x);
  });
  CHECK(relative_error(dot(a.grad(), dir), numeric) < 1e-6);

  const Tensor img = random_tensor({2, 4, 4}, 15), kern = random_tensor({3, 2, 3, 3}, 16), bias = random_tensor({3}, 17);
  auto g = [&](const ag::Var& x) {
    return ag::sum_squares(ag::upsample_nearest2(ag::avg_pool2(ag::silu(ag::conv2d(x, ag::constant(kern), ag::constant(bias), 1)))));
  };
  const ag::Var xi = ag::leaf(img, true);
  ag::backward(g(xi));
  const Tensor dir2 = random_tensor({2, 4, 4}, 18);
  const double numeric2 = directional_fd([&](double h) {
    Tensor x = img;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += h * dir2[i];
    return g(ag::constant(x)).value()[0];
  }, 1e-4);
  CHECK(relative_error(dot(xi.grad(), dir2), numeric2) < 1e-6);

  const Tensor m0 = random_tensor({4, 4}, 19, 0.0, 1.0);
  const ag::Var mv = ag::leaf(m0, true);
  ag::backward(ag::sum_squares(ag::resize_bilinear(mv, 7, 5)));
  const double numeric3 = directional_fd([&](double h) {
    Tensor x = m0;
    for (auto& v : x.data) v += h;
    return ag::sum_squares(ag::resize_bilinear(ag::constant(x), 7, 5)).value()[0];
  });
  double analytic3 = 0.0;
  for (double v : mv.grad().data) analytic3 += v;
  CHECK(relative_error(analytic3, numeric3) < 1e-6);
}

TEST_CASE("noise-prediction loss directional derivative in the embedding matches central differences") {
  const ToyBackbone b = trained_looking_backbone();
  const auto sched = make_schedule({});
  const Tensor x0 = random_image(16, 20);
  const Tensor noise = gaussian_tensor({3, 16, 16}, 21);
  const TextEmbedding e = b.text_encode({2, 17});
  const ConditioningInput cond{random_image(16, 22), 1.0};
  const int t = sched.timestep_for_step(30);
  const auto [loss, grad] = noise_prediction_loss_embedding_grad(b, x0, noise, t, sched, e, cond);
  CHECK(loss == doctest::Approx(noise_prediction_loss(b, x0, noise, t, sched, e, cond)).epsilon(1e-12));

  Tensor dir(e.tokens.shape);
  const Tensor r = random_tensor({1, e.dim()}, 23);
  for (int k = 0; k < e.dim(); ++k) dir[static_cast<std::size_t>(k)] = r[static_cast<std::size_t>(k)];
  const double numeric = directional_fd([&](double h) {
    TextEmbedding moved = e;
    for (std::size_t i = 0; i < dir.size(); ++i) moved.tokens[i] += h * dir[i];
    return noise_prediction_loss(b, x0, noise, t, sched, moved, cond);
  }, 1e-4);
  MESSAGE("analytic " << dot(grad, dir) << " numeric " << numeric);
  CHECK(relative_error(dot(grad, dir), numeric) <= 1e-3);
}
