#pragma once

#include <optional>
#include <string>
#include <vector>

#include "agile/autograd.hpp"
#include "agile/querymap.hpp"
#include "agile/scheduler.hpp"
#include "agile/tensor.hpp"

namespace agile {

// Token embedding matrix {n_tokens, d_embed}. Row 0 is the object token.
struct TextEmbedding {
  static constexpr int kObjectToken = 0;

  Tensor tokens;

  int n_tokens() const { return tokens.dim(0); }
  int dim() const { return tokens.dim(1); }
  bool operator==(const TextEmbedding& o) const { return tokens.shape == o.tokens.shape && tokens.data == o.tokens.data; }
};

struct ConditioningInput {
  Tensor condition_image;  // {3, H, W} in [0, 1]
  double control_scale = 1.0;
};

// Location of one decoder cross-attention call.
struct AttentionSite {
  int layer_id = 0;
  int timestep = 0;
  int height = 0;  // spatial grid of the query pixels
  int width = 0;
};

// Observer/editor invoked by every decoder cross-attention layer after the
// softmax and before the value multiplication. `heads[h]` is {n_query, n_tokens}.
class AttentionHooks {
 public:
  virtual ~AttentionHooks() = default;
  // Return replacement maps (same count and shapes) to edit, or nullopt to only observe.
  virtual std::optional<std::vector<Tensor>> on_attention(const AttentionSite& site, const std::vector<Tensor>& heads) = 0;
};

// Softmaxed maps of one decoder cross-attention layer, kept on the autodiff graph.
struct TracedAttention {
  AttentionSite site;
  std::vector<ag::Var> heads;
};

struct ForwardResult {
  ag::Var eps;
  std::vector<TracedAttention> attention;  // in decoder layer-id order
  std::vector<ag::Var> params;             // parameter leaves, same order as parameters()
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Denoiser, text encoder, codec and conditioning branch of a latent diffusion model.
//
// Decoder cross-attention layers are numbered 0..n-1 from the lowest-resolution
// (highest-level) block outward. Implementations other than the toy backbone
// (e.g. a pretrained adapter) must keep that ordering and document their own
// object-token offset in text_encode().
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual ImageSize image_size() const = 0;
  virtual std::vector<int> latent_shape() const = 0;
  virtual int vocabulary_size() const = 0;
  virtual int n_tokens() const = 0;
  virtual std::vector<int> decoder_cross_attention_layers() const = 0;
  virtual int attention_layer_count() const { return static_cast<int>(decoder_cross_attention_layers().size()); }

  virtual Tensor encode_image(const Tensor& image) const = 0;
  virtual Tensor decode_latent(const Tensor& latent) const = 0;
  virtual TextEmbedding text_encode(const std::vector<int>& token_ids) const = 0;

  // Differentiable denoiser pass. `embedding` may carry gradient; parameter
  // leaves are created with requires_grad = track_params.
  virtual ForwardResult forward(const Tensor& x_t, int timestep, const ag::Var& embedding,
                                const ConditioningInput& cond, AttentionHooks* hooks, bool track_params) const = 0;

  virtual std::vector<NamedTensor>& parameters() = 0;
  virtual const std::vector<NamedTensor>& parameters() const = 0;

  // Predicted noise for x_t. `hooks` may be null.
  Tensor denoise(const Latent& x_t, const TextEmbedding& e, const ConditioningInput& cond,
                 AttentionHooks* hooks = nullptr) const;
};

}  // namespace agile
