#include "agile/toy_backbone.hpp"

#include <cmath>
#include <random>

#include "agile/checkpoint.hpp"

namespace agile {

nlohmann::json ToyBackboneConfig::to_json() const {
  return {{"kind", "toy"},
          {"image_size", image_size},
          {"vocabulary", vocabulary},
          {"n_tokens", n_tokens},
          {"d_embed", d_embed},
          {"heads", heads},
          {"head_dim", head_dim},
          {"channels_high", channels_high},
          {"channels_mid", channels_mid},
          {"channels_low", channels_low},
          {"time_dim", time_dim},
          {"text_gain", text_gain},
          {"seed", seed}};
}

ToyBackboneConfig ToyBackboneConfig::from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "toy") throw Error("checkpoint architecture is not the toy backbone");
  ToyBackboneConfig c;
  c.image_size = j.at("image_size");
  c.vocabulary = j.at("vocabulary");
  c.n_tokens = j.at("n_tokens");
  c.d_embed = j.at("d_embed");
  c.heads = j.at("heads");
  c.head_dim = j.at("head_dim");
  c.channels_high = j.at("channels_high");
  c.channels_mid = j.at("channels_mid");
  c.channels_low = j.at("channels_low");
  c.time_dim = j.at("time_dim");
  c.text_gain = j.at("text_gain");
  c.seed = j.at("seed");
  return c;
}

namespace {

constexpr int kTimeFeatures = 16;

Tensor random_normal(std::vector<int> shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

Tensor timestep_features(int t) {
  Tensor f({1, kTimeFeatures});
  for (int i = 0; i < kTimeFeatures / 2; ++i) {
    const double freq = std::exp(-std::log(1000.0) * i / (kTimeFeatures / 2));
    f[static_cast<std::size_t>(i)] = std::sin(t * freq);
    f[static_cast<std::size_t>(i + kTimeFeatures / 2)] = std::cos(t * freq);
  }
  return f;
}

void check_image(const Tensor& img, int size, const char* what) {
  if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) != size || img.dim(2) != size) {
    throw ShapeError(std::string(what) + ": expected {3," + std::to_string(size) + "," + std::to_string(size) +
                     "}, got " + shape_string(img.shape));
  }
}

}  // namespace

ToyBackbone::ToyBackbone(const ToyBackboneConfig& c) : config_(c) {
  if (c.image_size % 4 != 0 || c.image_size < 4) throw ConfigError("toy backbone: image_size must be a multiple of 4");
  if (c.n_tokens < 2) throw ConfigError("toy backbone: need at least 2 tokens");
  if (c.d_embed < 2 || c.d_embed % 2 != 0) throw ConfigError("toy backbone: d_embed must be even");
  if (!(c.text_gain > 0.0)) throw ConfigError("toy backbone: text_gain must be > 0");
  std::mt19937_64 rng(c.seed);
  const int inner = c.heads * c.head_dim;
  auto conv = [&](const std::string& name, int co, int ci, int k) {
    params_.push_back({name + ".w", random_normal({co, ci, k, k}, std::sqrt(2.0 / (ci * k * k)), rng)});
    params_.push_back({name + ".b", Tensor({co}, 0.0)});
  };
  auto time_proj = [&](const std::string& name, int co) {
    params_.push_back({name + ".t", random_normal({c.time_dim, co}, std::sqrt(1.0 / c.time_dim), rng)});
  };
  auto zero_conv = [&](const std::string& name, int ch) {
    params_.push_back({name + ".w", Tensor({ch, ch, 1, 1}, 0.0)});
    params_.push_back({name + ".b", Tensor({ch}, 0.0)});
  };
  auto attention = [&](const std::string& name, int ch) {
    params_.push_back({name + ".wq", random_normal({ch, inner}, std::sqrt(1.0 / ch), rng)});
    params_.push_back({name + ".wk", random_normal({c.d_embed / 2, inner}, std::sqrt(2.0 / c.d_embed), rng)});
    params_.push_back({name + ".wv", random_normal({c.d_embed / 2, inner}, std::sqrt(2.0 / c.d_embed), rng)});
    params_.push_back({name + ".wo", random_normal({inner, ch}, std::sqrt(1.0 / inner), rng)});
    params_.push_back({name + ".bo", Tensor({ch}, 0.0)});
  };

  params_.push_back({"time.w", random_normal({kTimeFeatures, c.time_dim}, std::sqrt(1.0 / kTimeFeatures), rng)});
  params_.push_back({"time.b", Tensor({c.time_dim}, 0.0)});
  conv("enc1", c.channels_high, 3, 3);
  time_proj("enc1", c.channels_high);
  conv("enc2", c.channels_mid, c.channels_high, 3);
  time_proj("enc2", c.channels_mid);
  conv("enc3", c.channels_low, c.channels_mid, 3);
  time_proj("enc3", c.channels_low);
  conv("ctl1", c.channels_high, 6, 3);
  conv("ctl2", c.channels_mid, c.channels_high, 3);
  conv("ctl3", c.channels_low, c.channels_mid, 3);
  zero_conv("zero1", c.channels_high);
  zero_conv("zero2", c.channels_mid);
  zero_conv("zero3", c.channels_low);
  conv("dec0", c.channels_low, c.channels_low, 3);
  time_proj("dec0", c.channels_low);
  attention("attn0", c.channels_low);
  conv("dec1", c.channels_mid, c.channels_low + c.channels_mid, 3);
  time_proj("dec1", c.channels_mid);
  attention("attn1", c.channels_mid);
  conv("dec2", c.channels_high, c.channels_mid + c.channels_high, 3);
  time_proj("dec2", c.channels_high);
  attention("attn2", c.channels_high);
  conv("out", 3, c.channels_high, 3);
  // Time-dependent pass-through of x_t; pure noise at large t is then cheap to predict.
  params_.push_back({"skip.w", Tensor({c.time_dim, 1}, 0.0)});
  params_.push_back({"skip.b", Tensor({1}, 1.0)});

  token_table_ = random_normal({c.vocabulary, c.d_embed}, 1.0, rng);
  position_table_ = random_normal({c.n_tokens, c.d_embed}, 0.1, rng);
  for (Tensor* t : {&token_table_, &position_table_}) {
    for (int r = 0; r < t->dim(0); ++r)
      for (int d = 0; d < c.d_embed / 2; ++d) (*t)[static_cast<std::size_t>(r) * c.d_embed + d] /= c.text_gain;
  }
}

std::size_t ToyBackbone::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw Error("toy backbone has no parameter '" + name + "'");
}

Tensor ToyBackbone::encode_image(const Tensor& image) const {
  check_image(image, config_.image_size, "encode_image");
  for (double v : image.data) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("encode_image: pixel outside [0,1]");
  }
  return image;
}

Tensor ToyBackbone::decode_latent(const Tensor& latent) const {
  check_image(latent, config_.image_size, "decode_latent");
  return latent;
}


TextEmbedding ToyBackbone::text_encode(const std::vector<int>& token_ids) const {
  if (token_ids.size() > static_cast<std::size_t>(config_.n_tokens)) {
    throw DomainError("text_encode: prompt longer than " + std::to_string(config_.n_tokens) + " tokens");
  }
  Tensor e({config_.n_tokens, config_.d_embed});
  for (int i = 0; i < config_.n_tokens; ++i) {
    const int id = i < static_cast<int>(token_ids.size()) ? token_ids[static_cast<std::size_t>(i)] : 0;
    if (id < 0 || id >= config_.vocabulary) {
      throw DomainError("text_encode: token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(config_.vocabulary));
    }
    for (int d = 0; d < config_.d_embed; ++d) {
      e[static_cast<std::size_t>(i) * config_.d_embed + d] =
          token_table_[static_cast<std::size_t>(id) * config_.d_embed + d] +
          position_table_[static_cast<std::size_t>(i) * config_.d_embed + d];
    }
  }
  return TextEmbedding{std::move(e)};
}

ForwardResult ToyBackbone::forward(const Tensor& x_t, int timestep, const ag::Var& embedding,
                                   const ConditioningInput& cond, AttentionHooks* hooks, bool track_params) const {
  using namespace ag;
  const auto& c = config_;
  check_image(x_t, c.image_size, "denoise");
  if (embedding.shape() != std::vector<int>{c.n_tokens, c.d_embed}) {
    throw ShapeError("denoise: embedding shape " + shape_string(embedding.shape()));
  }
  if (!(cond.control_scale >= 0.0)) throw ConfigError("denoise: control_scale must be >= 0");

  ForwardResult result;
  result.params.reserve(params_.size());
  for (const auto& p : params_) result.params.push_back(leaf(p.value, track_params));
  auto P = [&](const std::string& name) -> const Var& { return result.params[index_of(name)]; };

  const Var x = constant(x_t);
  const Var temb = silu(add_row_bias(matmul(constant(timestep_features(timestep)), P("time.w")), P("time.b")));
  auto time_bias = [&](const std::string& name) {
    const int ch = P(name + ".t").value().dim(1);
    return reshape(matmul(temb, P(name + ".t")), {ch});
  };
  auto block = [&](const Var& in, const std::string& name) {
    return silu(add_channel_bias(conv2d(in, P(name + ".w"), P(name + ".b"), 1), time_bias(name)));
  };

  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(c.head_dim));
  // Keys read the first half of each embedding row and values the second, so
  // where a token attends and what it contributes are separate coordinates.
  const int half = c.d_embed / 2;
  const Var key_part = scale(slice_cols(embedding, 0, half), c.text_gain);
  const Var value_part = slice_cols(embedding, half, c.d_embed);
  auto cross_attention = [&](const Var& feat, int layer_id) {
    const std::string name = "attn" + std::to_string(layer_id);
    const int ch = feat.value().dim(0), h = feat.value().dim(1), w = feat.value().dim(2);
    const Var queries = matmul(transpose(reshape(feat, {ch, h * w})), P(name + ".wq"));
    const Var keys = matmul(key_part, P(name + ".wk"));
    const Var values = matmul(value_part, P(name + ".wv"));
    std::vector<Var> probs;
    for (int hd = 0; hd < c.heads; ++hd) {
      const Var q = slice_cols(queries, hd * c.head_dim, (hd + 1) * c.head_dim);
      const Var k = slice_cols(keys, hd * c.head_dim, (hd + 1) * c.head_dim);
      probs.push_back(softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_dk)));
    }
    const AttentionSite site{layer_id, timestep, h, w};
    if (hooks) {
      std::vector<Tensor> view;
      view.reserve(probs.size());
      for (const auto& p : probs) view.push_back(p.value());
      if (auto edited = hooks->on_attention(site, view)) {
        if (edited->size() != probs.size()) throw ShapeError("attention hook returned wrong head count");
        for (std::size_t i = 0; i < probs.size(); ++i) {
          require_same_shape((*edited)[i], probs[i].value(), "attention hook");
          probs[i] = constant(std::move((*edited)[i]));
        }
      }
    }
    result.attention.push_back({site, probs});
    std::vector<Var> heads_out;
    for (int hd = 0; hd < c.heads; ++hd) {
      heads_out.push_back(matmul(probs[static_cast<std::size_t>(hd)],
                                 slice_cols(values, hd * c.head_dim, (hd + 1) * c.head_dim)));
    }
    const Var mixed = add_row_bias(matmul(concat_cols(heads_out), P(name + ".wo")), P(name + ".bo"));
    return add(feat, reshape(transpose(mixed), {ch, h, w}));
  };

  Var h1 = block(x, "enc1");
  Var h2 = block(avg_pool2(h1), "enc2");
  Var h3 = block(avg_pool2(h2), "enc3");

  if (cond.control_scale != 0.0) {
    check_image(cond.condition_image, c.image_size, "condition image");
    const Var joined = concat_channels(x, constant(cond.condition_image));
    const Var g1 = silu(conv2d(joined, P("ctl1.w"), P("ctl1.b"), 1));
    const Var g2 = silu(conv2d(avg_pool2(g1), P("ctl2.w"), P("ctl2.b"), 1));
    const Var g3 = silu(conv2d(avg_pool2(g2), P("ctl3.w"), P("ctl3.b"), 1));
    h1 = add(h1, scale(conv2d(g1, P("zero1.w"), P("zero1.b"), 0), cond.control_scale));
    h2 = add(h2, scale(conv2d(g2, P("zero2.w"), P("zero2.b"), 0), cond.control_scale));
    h3 = add(h3, scale(conv2d(g3, P("zero3.w"), P("zero3.b"), 0), cond.control_scale));
  }

  Var d = cross_attention(block(h3, "dec0"), 0);
  d = cross_attention(block(concat_channels(upsample_nearest2(d), h2), "dec1"), 1);
  d = cross_attention(block(concat_channels(upsample_nearest2(d), h1), "dec2"), 2);
  const Var skip = add_row_bias(matmul(temb, P("skip.w")), P("skip.b"));
  result.eps = add(conv2d(d, P("out.w"), P("out.b"), 1), scale_by(x, skip));
  return result;
}

void ToyBackbone::save(const std::filesystem::path& dir, const nlohmann::json& extra) const {
  Container ctr;
  ctr.manifest = extra;
  ctr.manifest["kind"] = "backbone";
  ctr.manifest["architecture"] = config_.to_json();
  ctr.manifest["vocab"] = {{"size", config_.vocabulary}, {"pad_id", 0}, {"object_token_index", 0}};
  ctr.tensors = params_;
  ctr.tensors.push_back({"text.token_table", token_table_});
  ctr.tensors.push_back({"text.position_table", position_table_});
  save_container(dir, ctr);
}

ToyBackbone ToyBackbone::load(const std::filesystem::path& dir) {
  Container ctr = load_container(dir);
  if (ctr.manifest.value("kind", "") != "backbone") throw Error(dir.string() + " is not a backbone checkpoint");
  ToyBackbone b(ToyBackboneConfig::from_json(ctr.manifest.at("architecture")));
  for (auto& p : b.params_) {
    const Tensor& t = ctr.tensor(p.name);
    require_same_shape(t, p.value, ("checkpoint tensor " + p.name).c_str());
    p.value = t;
  }
  b.token_table_ = ctr.tensor("text.token_table");
  b.position_table_ = ctr.tensor("text.position_table");
  return b;
}

}  // namespace agile
