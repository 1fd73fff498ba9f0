#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "agile/backbone.hpp"

namespace agile {

struct ToyBackboneConfig {
  int image_size = 16;
  int vocabulary = 64;
  int n_tokens = 8;
  int d_embed = 32;
  int heads = 4;
  int head_dim = 8;
  int channels_high = 16;  // 16x16 level
  int channels_mid = 32;   // 8x8 level
  int channels_low = 32;   // 4x4 level
  int time_dim = 32;
  // Cross-attention keys read the first half of each embedding row times this
  // factor and values read the second half. The key half of the token table is
  // drawn at 1/text_gain scale, so gradient descent on an embedding row moves
  // where a token attends text_gain^2 times faster than what it contributes.
  double text_gain = 48.0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ToyBackboneConfig from_json(const nlohmann::json& j);
};

// Desk-scale U-Net: pixel-space identity codec, three encoder levels, a
// ControlNet-style conditioning branch joined through zero-initialized 1x1
// projections, and three decoder blocks with one cross-attention layer each.
class ToyBackbone final : public Backbone {
 public:
  explicit ToyBackbone(const ToyBackboneConfig& config = {});

  const ToyBackboneConfig& config() const { return config_; }

  ImageSize image_size() const override { return {config_.image_size, config_.image_size}; }
  std::vector<int> latent_shape() const override { return {3, config_.image_size, config_.image_size}; }
  int vocabulary_size() const override { return config_.vocabulary; }
  int n_tokens() const override { return config_.n_tokens; }
  std::vector<int> decoder_cross_attention_layers() const override { return {0, 1, 2}; }

  Tensor encode_image(const Tensor& image) const override;
  Tensor decode_latent(const Tensor& latent) const override;
  // Ids shorter than n_tokens are padded with id 0; no special start token.
  TextEmbedding text_encode(const std::vector<int>& token_ids) const override;

  ForwardResult forward(const Tensor& x_t, int timestep, const ag::Var& embedding, const ConditioningInput& cond,
                        AttentionHooks* hooks, bool track_params) const override;

  std::vector<NamedTensor>& parameters() override { return params_; }
  const std::vector<NamedTensor>& parameters() const override { return params_; }

  // Checkpoint container; `extra` is merged into the manifest.
  void save(const std::filesystem::path& dir, const nlohmann::json& extra = nlohmann::json::object()) const;
  static ToyBackbone load(const std::filesystem::path& dir);

 private:
  ToyBackboneConfig config_;
  std::vector<NamedTensor> params_;
  Tensor token_table_;  // {vocabulary, d_embed}, frozen
  Tensor position_table_;  // {n_tokens, d_embed}, frozen

  std::size_t index_of(const std::string& name) const;
};

}  // namespace agile
