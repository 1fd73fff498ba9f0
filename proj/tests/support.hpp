#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <functional>
#include <optional>
#include <utility>

#include "agile/backbone.hpp"
#include "agile/scheduler.hpp"
#include "agile/tensor.hpp"
#include "agile/toy_backbone.hpp"

namespace agile::testing {

inline Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = u(rng);
  return t;
}

inline Tensor random_image(int size, std::uint64_t seed) { return random_tensor({3, size, size}, seed, 0.0, 1.0); }

inline Tensor gaussian_tensor(std::vector<int> shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = g(rng);
  return t;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Denoiser that knows x0 and returns the exact noise, or zero when x0 is unset.
class OracleBackbone final : public Backbone {
 public:
  OracleBackbone(std::vector<int> shape, const NoiseSchedule* schedule, std::optional<Tensor> x0)
      : shape_(std::move(shape)), schedule_(schedule), x0_(std::move(x0)) {}
  ImageSize image_size() const override { return {shape_[1], shape_[2]}; }
  std::vector<int> latent_shape() const override { return shape_; }
  int vocabulary_size() const override { return 2; }
  int n_tokens() const override { return 2; }
  std::vector<int> decoder_cross_attention_layers() const override { return {0}; }
  Tensor encode_image(const Tensor& image) const override { return image; }
  Tensor decode_latent(const Tensor& latent) const override { return latent; }
  TextEmbedding text_encode(const std::vector<int>&) const override { return {Tensor({2, 2}, 0.0)}; }
  ForwardResult forward(const Tensor& x_t, int t, const ag::Var&, const ConditioningInput&, AttentionHooks*,
                        bool) const override {
    Tensor eps(x_t.shape, 0.0);
    if (x0_) {
      const double a = schedule_->alpha_bar_at(t);
      for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = (x_t[i] - std::sqrt(a) * (*x0_)[i]) / std::sqrt(1 - a);
    }
    ForwardResult fr;
    fr.eps = ag::constant(eps);
    return fr;
  }
  std::vector<NamedTensor>& parameters() override { return params_; }
  const std::vector<NamedTensor>& parameters() const override { return params_; }

 private:
  std::vector<int> shape_;
  const NoiseSchedule* schedule_;
  std::optional<Tensor> x0_;
  std::vector<NamedTensor> params_;
};

// Default toy backbone with every parameter nudged so that zero-initialized
// branches take part.
inline ToyBackbone perturbed_backbone(std::uint64_t seed) {
  ToyBackbone b(ToyBackboneConfig{});
  for (auto& p : b.parameters()) {
    const Tensor noise = random_tensor(p.value.shape, seed++, -0.05, 0.05);
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] += noise[i];
  }
  return b;
}

// Central difference of f at 0.
inline double directional_fd(const std::function<double(double)>& f, double h = 1e-3) {
  return (f(h) - f(-h)) / (2 * h);
}

}  // namespace agile::testing
