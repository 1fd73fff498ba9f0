#pragma once

#include <map>
#include <optional>
#include <tuple>
#include <vector>

#include "agile/backbone.hpp"
#include "agile/querymap.hpp"

namespace agile {

// softmax(Q K^T / sqrt(d_k)) row-wise. Q is {n_q, d_k}, K is {n_tok, d_k}.
Tensor cross_attention(const Tensor& queries, const Tensor& keys);
ag::Var cross_attention(const ag::Var& queries, const ag::Var& keys);

struct AttentionKey {
  int layer_id = 0;
  int head = 0;
  int timestep = 0;
  auto operator<=>(const AttentionKey&) const = default;
};

// Softmaxed cross-attention maps captured during denoising.
struct AttentionRecord {
  std::map<AttentionKey, Tensor> entries;  // {n_query_pixels, n_tokens}
  std::map<int, ImageSize> layer_shapes;

  int head_count(int layer_id, int timestep) const;
};

// Hook that copies every map it sees into an AttentionRecord.
class AttentionRecorder final : public AttentionHooks {
 public:
  std::optional<std::vector<Tensor>> on_attention(const AttentionSite& site, const std::vector<Tensor>& heads) override;
  const AttentionRecord& record() const { return record_; }

 private:
  AttentionRecord record_;
};

struct TokenMap {
  MapGrid values;
  int token_index = 0;
  int layer_id = 0;
};

struct AggregatedTokenMaps {
  std::vector<TokenMap> per_layer;  // head mean, native layer resolution
  MapGrid mean;                     // cross-layer mean at the largest layer resolution
};

AggregatedTokenMaps aggregate_token_map(const AttentionRecord& record, int token, const std::vector<int>& layers,
                                        int timestep);

// Mean over heads of one token's column, reshaped to the layer grid.
MapGrid head_mean_token_map(const std::vector<Tensor>& heads, int token, ImageSize shape);
// Same on the autodiff graph: {height, width}.
ag::Var head_mean_token_map(const TracedAttention& layer, int token);

struct MapStats {
  double mean = 0.0;
  double stddev = 1.0;
};

struct NormalizedMap {
  TokenMap map;
  MapStats stats;
  bool degenerate = false;  // stddev < 1e-8; map is all zero
};

NormalizedMap normalize_map(const TokenMap& map);

enum class TokenRole { object, background };

struct GuidanceConfig {
  double beta_object = 1.0;
  double beta_background = 1.0;
  int stop_step = 15;
  std::vector<int> target_layers = {0, 1, 2};
  int opt_timestep = 30;
  double control_scale = 1.0;

  // Throws ConfigError on negative betas/stop_step or layers outside the decoder.
  void validate(const std::vector<int>& decoder_layers) const;
  double beta(TokenRole role) const { return role == TokenRole::object ? beta_object : beta_background; }
};

// M_edit = beta * M~ + M~_s in standardized space, mapped back to raw scale with
// `stats` and clamped at 0. M~_s = (query - mean) / stddev for the object token and
// 0 for background tokens or an all-zero query. `query` must already match the
// map's resolution.
MapGrid edit_attention(const TokenMap& normalized, const QueryAttentionMap& query, TokenRole role,
                       const GuidanceConfig& config, const MapStats& stats);

// Rebuilds {n_q, n_tok} from per-token maps (nullopt keeps the original column)
// and renormalizes each row to sum 1; zero rows become uniform. With no edits
// the original matrix is returned unchanged.
Tensor apply_guided_attention(const Tensor& original, const std::vector<std::optional<MapGrid>>& edited_tokens);

// Attention guidance during sampling. Edits layers in config.target_layers while
// the current step is below config.stop_step. The head-averaged edit is pushed
// into each head as an additive delta before row renormalization.
class GuidanceHook final : public AttentionHooks {
 public:
  struct UsedMap {
    int step = 0;
    int layer_id = 0;
    bool edited = false;
    MapGrid object_map;  // head-mean token-0 map after any edit
  };

  GuidanceHook(GuidanceConfig config, QueryAttentionMap query, bool record_maps = false);

  void set_step(int step) { step_ = step; }
  std::optional<std::vector<Tensor>> on_attention(const AttentionSite& site, const std::vector<Tensor>& heads) override;

  const std::vector<UsedMap>& used_maps() const { return used_; }
  int edits_applied() const { return edits_; }

 private:
  const QueryAttentionMap& query_at(ImageSize size);

  GuidanceConfig config_;
  QueryAttentionMap query_;
  bool query_empty_;
  bool record_;
  int step_ = 0;
  int edits_ = 0;
  std::map<std::pair<int, int>, QueryAttentionMap> resampled_;
  std::vector<UsedMap> used_;
};

}  // namespace agile
