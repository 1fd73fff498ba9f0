#include "agile/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace agile {

ag::Var cross_attention(const ag::Var& queries, const ag::Var& keys) {
  if (queries.value().rank() != 2 || keys.value().rank() != 2) throw ShapeError("cross_attention: expected matrices");
  const int dk = queries.value().dim(1);
  if (dk < 1 || keys.value().dim(1) != dk) {
    throw ShapeError("cross_attention: key dim " + shape_string(keys.shape()) + " vs query dim " +
                     shape_string(queries.shape()));
  }
  return ag::softmax_rows(ag::scale(ag::matmul(queries, ag::transpose(keys)), 1.0 / std::sqrt(static_cast<double>(dk))));
}

Tensor cross_attention(const Tensor& queries, const Tensor& keys) {
  return cross_attention(ag::constant(queries), ag::constant(keys)).value();
}

int AttentionRecord::head_count(int layer_id, int timestep) const {
  int n = 0;
  while (entries.count({layer_id, n, timestep})) ++n;
  return n;
}

std::optional<std::vector<Tensor>> AttentionRecorder::on_attention(const AttentionSite& site,
                                                                   const std::vector<Tensor>& heads) {
  record_.layer_shapes[site.layer_id] = {site.height, site.width};
  for (std::size_t h = 0; h < heads.size(); ++h) {
    record_.entries[{site.layer_id, static_cast<int>(h), site.timestep}] = heads[h];
  }
  return std::nullopt;
}

MapGrid head_mean_token_map(const std::vector<Tensor>& heads, int token, ImageSize shape) {
  if (heads.empty()) throw ShapeError("head_mean_token_map: no heads");
  const int n_q = heads[0].dim(0), n_tok = heads[0].dim(1);
  if (n_q != shape.height * shape.width) throw ShapeError("head_mean_token_map: query count does not match grid");
  if (token < 0 || token >= n_tok) throw ShapeError("head_mean_token_map: token index out of range");
  MapGrid out(shape.height, shape.width);
  for (const auto& h : heads) {
    for (int q = 0; q < n_q; ++q) out.values[static_cast<std::size_t>(q)] += h[static_cast<std::size_t>(q) * n_tok + token];
  }
  for (auto& v : out.values) v /= static_cast<double>(heads.size());
  return out;
}

ag::Var head_mean_token_map(const TracedAttention& layer, int token) {
  if (layer.heads.empty()) throw ShapeError("head_mean_token_map: no heads");
  std::vector<ag::Var> cols;
  cols.reserve(layer.heads.size());
  for (const auto& h : layer.heads) cols.push_back(ag::column(h, token));
  const ag::Var mean = ag::scale(ag::add_n(cols), 1.0 / static_cast<double>(cols.size()));
  return ag::reshape(mean, {layer.site.height, layer.site.width});
}

AggregatedTokenMaps aggregate_token_map(const AttentionRecord& record, int token, const std::vector<int>& layers,
                                        int timestep) {
  if (layers.empty()) throw ConfigError("aggregate_token_map: no layers requested");
  AggregatedTokenMaps out;
  ImageSize largest{0, 0};
  for (int layer : layers) {
    const int n_heads = record.head_count(layer, timestep);
    auto shape_it = record.layer_shapes.find(layer);
    if (n_heads == 0 || shape_it == record.layer_shapes.end()) {
      throw Error("attention record is missing entry (layer=" + std::to_string(layer) +
                  ", timestep=" + std::to_string(timestep) + ")");
    }
    std::vector<Tensor> heads;
    for (int h = 0; h < n_heads; ++h) heads.push_back(record.entries.at({layer, h, timestep}));
    out.per_layer.push_back({head_mean_token_map(heads, token, shape_it->second), token, layer});
    if (shape_it->second.height * shape_it->second.width > largest.height * largest.width) largest = shape_it->second;
  }
  out.mean = MapGrid(largest.height, largest.width);
  for (const auto& tm : out.per_layer) {
    const MapGrid up = resample_grid(tm.values, largest);
    for (std::size_t i = 0; i < up.size(); ++i) out.mean.values[i] += up.values[i];
  }
  for (auto& v : out.mean.values) v /= static_cast<double>(out.per_layer.size());
  return out;
}

NormalizedMap normalize_map(const TokenMap& map) {
  const auto& v = map.values.values;
  if (v.empty()) throw ShapeError("normalize_map: empty map");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(v.size()));
  NormalizedMap out{map, {mean, sd}, sd < 1e-8};
  for (auto& x : out.map.values.values) x = out.degenerate ? 0.0 : (x - mean) / sd;
  return out;
}

void GuidanceConfig::validate(const std::vector<int>& decoder_layers) const {
  if (!(beta_object >= 0.0) || !(beta_background >= 0.0)) throw ConfigError("guidance: betas must be >= 0");
  if (stop_step < 0) throw ConfigError("guidance: stop_step must be >= 0");
  if (!(control_scale >= 0.0)) throw ConfigError("guidance: control_scale must be >= 0");
  for (int l : target_layers) {
    if (std::find(decoder_layers.begin(), decoder_layers.end(), l) == decoder_layers.end()) {
      throw ConfigError("guidance: target layer " + std::to_string(l) + " is not a decoder cross-attention layer");
    }
  }
}

MapGrid edit_attention(const TokenMap& normalized, const QueryAttentionMap& query, TokenRole role,
                       const GuidanceConfig& config, const MapStats& stats) {
  const MapGrid& m = normalized.values;
  const bool query_term = role == TokenRole::object && !query.all_zero();
  if (query_term && (query.grid.height != m.height || query.grid.width != m.width)) {
    throw ShapeError("edit_attention: query map " + std::to_string(query.grid.height) + "x" +
                     std::to_string(query.grid.width) + " does not match token map " + std::to_string(m.height) +
                     "x" + std::to_string(m.width));
  }
  const double beta = config.beta(role);
  // A constant token map has no spread; its query term is taken on the raw scale.
  const double sd = stats.stddev < 1e-8 ? 1.0 : stats.stddev;
  MapGrid out(m.height, m.width);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double guide = query_term ? (query.grid.values[i] - stats.mean) / sd : 0.0;
    const double edited = beta * m.values[i] + guide;
    out.values[i] = std::max(0.0, edited * sd + stats.mean);
  }
  return out;
}

namespace {

void renormalize_rows(Tensor& m) {
  const int n_q = m.dim(0), n_tok = m.dim(1);
  for (int q = 0; q < n_q; ++q) {
    double* row = m.data.data() + static_cast<std::size_t>(q) * n_tok;
    double s = 0.0;
    for (int j = 0; j < n_tok; ++j) s += row[j];
    if (s > 0.0) {
      for (int j = 0; j < n_tok; ++j) row[j] /= s;
    } else {
      for (int j = 0; j < n_tok; ++j) row[j] = 1.0 / n_tok;
    }
  }
}

}  // namespace

Tensor apply_guided_attention(const Tensor& original, const std::vector<std::optional<MapGrid>>& edited_tokens) {
  if (original.rank() != 2) throw ShapeError("apply_guided_attention: expected {n_q, n_tok}");
  const int n_q = original.dim(0), n_tok = original.dim(1);
  if (edited_tokens.size() > static_cast<std::size_t>(n_tok)) throw ShapeError("apply_guided_attention: too many tokens");
  const bool any = std::any_of(edited_tokens.begin(), edited_tokens.end(), [](const auto& e) { return e.has_value(); });
  if (!any) return original;
  Tensor out = original;
  for (std::size_t j = 0; j < edited_tokens.size(); ++j) {
    if (!edited_tokens[j]) continue;
    const auto& v = edited_tokens[j]->values;
    if (v.size() != static_cast<std::size_t>(n_q)) throw ShapeError("apply_guided_attention: map size mismatch");
    for (int q = 0; q < n_q; ++q) {
      if (v[static_cast<std::size_t>(q)] < 0.0) throw DomainError("apply_guided_attention: negative edited attention");
      out[static_cast<std::size_t>(q) * n_tok + j] = v[static_cast<std::size_t>(q)];
    }
  }
  renormalize_rows(out);
  return out;
}

GuidanceHook::GuidanceHook(GuidanceConfig config, QueryAttentionMap query, bool record_maps)
    : config_(std::move(config)), query_(std::move(query)), query_empty_(query_.all_zero()), record_(record_maps) {}

const QueryAttentionMap& GuidanceHook::query_at(ImageSize size) {
  auto key = std::make_pair(size.height, size.width);
  auto it = resampled_.find(key);
  if (it == resampled_.end()) it = resampled_.emplace(key, resample_map(query_, size)).first;
  return it->second;
}

std::optional<std::vector<Tensor>> GuidanceHook::on_attention(const AttentionSite& site,
                                                              const std::vector<Tensor>& heads) {
  const ImageSize shape{site.height, site.width};
  const bool active = step_ < config_.stop_step &&
                      std::find(config_.target_layers.begin(), config_.target_layers.end(), site.layer_id) !=
                          config_.target_layers.end();
  auto remember = [&](const std::vector<Tensor>& used, bool edited) {
    if (record_) used_.push_back({step_, site.layer_id, edited, head_mean_token_map(used, TextEmbedding::kObjectToken, shape)});
  };
  if (!active) {
    remember(heads, false);
    return std::nullopt;
  }

  const int n_q = heads[0].dim(0), n_tok = heads[0].dim(1);
  Tensor mean({n_q, n_tok});
  for (const auto& h : heads)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += h[i];
  for (auto& v : mean.data) v /= static_cast<double>(heads.size());

  std::vector<std::optional<MapGrid>> edits(static_cast<std::size_t>(n_tok));
  for (int j = 0; j < n_tok; ++j) {
    const TokenRole role = j == TextEmbedding::kObjectToken ? TokenRole::object : TokenRole::background;
    const bool identity = config_.beta(role) == 1.0 && (role == TokenRole::background || query_empty_);
    if (identity) continue;
    TokenMap tm{MapGrid(shape.height, shape.width), j, site.layer_id};
    for (int q = 0; q < n_q; ++q) tm.values.values[static_cast<std::size_t>(q)] = mean[static_cast<std::size_t>(q) * n_tok + j];
    const NormalizedMap norm = normalize_map(tm);
    edits[static_cast<std::size_t>(j)] = edit_attention(norm.map, query_at(shape), role, config_, norm.stats);
  }
  if (std::none_of(edits.begin(), edits.end(), [](const auto& e) { return e.has_value(); })) {
    remember(heads, false);
    return std::nullopt;
  }
  const Tensor guided = apply_guided_attention(mean, edits);

  std::vector<Tensor> out;
  out.reserve(heads.size());
  for (const auto& h : heads) {
    Tensor e = h;
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::max(0.0, h[i] + guided[i] - mean[i]);
    renormalize_rows(e);
    out.push_back(std::move(e));
  }
  ++edits_;
  remember(out, true);
  return out;
}

}  // namespace agile
