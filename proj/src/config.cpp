#include "agile/config.hpp"

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace agile {

namespace {

enum class Kind { integer, real, boolean, text, int_list };

struct KeySpec {
  const char* key;
  Kind kind;
  const char* fallback;
  double lo;
  double hi;
};

constexpr double kInf = 1e300;

// Defaults follow the method's stated values where it states them.
const KeySpec kKeys[] = {
    {"seed", Kind::integer, "0", 0, kInf},
    {"workers", Kind::integer, "1", 1, 256},
    {"paths.fixture", Kind::text, "fixture", 0, 0},
    {"paths.source_annotations", Kind::text, "", 0, 0},
    {"paths.source_images", Kind::text, "", 0, 0},
    {"paths.target_annotations", Kind::text, "", 0, 0},
    {"paths.target_images", Kind::text, "", 0, 0},
    {"paths.models", Kind::text, "models", 0, 0},
    {"paths.embedding", Kind::text, "embedding", 0, 0},
    {"paths.output", Kind::text, "out", 0, 0},
    {"fixture.n_images", Kind::integer, "96", 5, 100000},
    {"fixture.seed", Kind::integer, "7", 0, kInf},
    {"fixture.image_size", Kind::integer, "16", 8, 256},
    {"schedule.train_timesteps", Kind::integer, "1000", 1, 100000},
    {"schedule.inference_steps", Kind::integer, "50", 1, 100000},
    {"schedule.beta_min", Kind::real, "0.00085", 0, 1},
    {"schedule.beta_max", Kind::real, "0.012", 0, 1},
    {"model.seed", Kind::integer, "0", 0, kInf},
    {"pretrain.steps", Kind::integer, "6000", 0, 10000000},
    {"pretrain.corpus_size", Kind::integer, "1024", 1, 10000000},
    {"pretrain.batch_size", Kind::integer, "8", 1, 4096},
    {"pretrain.learning_rate", Kind::real, "0.001", 0, 10},
    {"pretrain.seed", Kind::integer, "11", 0, kInf},
    {"pretrain.corpus_seed", Kind::integer, "3", 0, kInf},
    {"pretrain.attention_weight", Kind::real, "10", 0, kInf},
    {"pretrain.guided_fraction", Kind::real, "0.5", 0, 1},
    {"finetune.max_steps", Kind::integer, "500", 0, 10000000},
    {"finetune.batch_size", Kind::integer, "8", 1, 4096},
    {"finetune.learning_rate", Kind::real, "0.001", 0, 10},
    {"finetune.loss_threshold", Kind::real, "0", 0, kInf},
    {"finetune.augment", Kind::boolean, "true", 0, 0},
    {"finetune.seed", Kind::integer, "5", 0, kInf},
    {"textopt.learning_rate", Kind::real, "0.01", 0, kInf},
    {"textopt.max_steps", Kind::integer, "200", 0, 10000000},
    {"textopt.opt_timestep", Kind::integer, "30", 0, 100000},
    {"textopt.seed", Kind::integer, "0", 0, kInf},
    {"textopt.n_images", Kind::integer, "5", 1, 100000},
    {"textopt.sigma_scale", Kind::real, "0.5", 0, kInf},
    {"guidance.beta_object", Kind::real, "1", 0, kInf},
    {"guidance.beta_background", Kind::real, "1", 0, kInf},
    {"guidance.stop_step", Kind::integer, "15", 0, 100000},
    {"guidance.target_layers", Kind::int_list, "0,1,2", 0, 0},
    {"guidance.control_scale", Kind::real, "1", 0, kInf},
    {"translate.n_samples", Kind::integer, "0", 0, 1000000},
    {"translate.first", Kind::integer, "0", 0, 1000000},
    {"translate.seed", Kind::integer, "100", 0, kInf},
    {"eval.feature_dim", Kind::integer, "64", 1, 4096},
    {"eval.pool", Kind::integer, "8", 1, 256},
    {"eval.feature_seed", Kind::integer, "24301", 0, kInf},
    {"plot.sample", Kind::integer, "0", 0, 1000000},
    {"plot.step", Kind::integer, "0", 0, 100000},
};

const KeySpec* find_spec(const std::string& key) {
  for (const auto& k : kKeys)
    if (key == k.key) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<int> parse_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<int>(parse_int(key, item)));
  }
  return out;
}

// Canonical text for a validated value, so equal settings hash equally.
std::string normalize(const KeySpec& spec, const std::string& value) {
  const std::string v = trim(value);
  switch (spec.kind) {
    case Kind::integer: {
      const long long i = parse_int(spec.key, v);
      if (i < spec.lo || static_cast<double>(i) > spec.hi) {
        throw ConfigError(std::string(spec.key) + ": " + v + " is out of range");
      }
      return std::to_string(i);
    }
    case Kind::real: {
      const double d = parse_real(spec.key, v);
      if (!(d >= spec.lo && d <= spec.hi)) throw ConfigError(std::string(spec.key) + ": " + v + " is out of range");
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", d);
      return buf;
    }
    case Kind::boolean:
      return parse_bool(spec.key, v) ? "true" : "false";
    case Kind::int_list: {
      std::string out;
      for (int i : parse_list(spec.key, v)) {
        if (i < 0) throw ConfigError(std::string(spec.key) + ": negative entry");
        out += (out.empty() ? "" : ",") + std::to_string(i);
      }
      return out;
    }
    case Kind::text:
      return v;
  }
  return v;
}

void flatten(const nlohmann::json& j, const std::string& prefix, RunConfig& cfg) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    const auto& v = it.value();
    if (v.is_object()) {
      flatten(v, key, cfg);
    } else if (v.is_array()) {
      std::string s;
      for (const auto& e : v) s += (s.empty() ? "" : ",") + e.dump();
      cfg.set(key, s);
    } else if (v.is_string()) {
      cfg.set(key, v.get<std::string>());
    } else {
      cfg.set(key, v.dump());
    }
  }
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : kKeys) values_[k.key] = normalize(k, k.fallback);
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& k : kKeys) out.emplace_back(k.key);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* spec = find_spec(key);
  if (spec == nullptr) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = normalize(*spec, value);
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed JSON config: ") + e.what());
    }
    flatten(j, "", cfg);
  } else {
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifactError("config file not found: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

bool RunConfig::has_key(const std::string& key) const { return values_.count(key) > 0; }

const std::string& RunConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

long long RunConfig::get_int(const std::string& key) const { return parse_int(key, raw(key)); }
double RunConfig::get_double(const std::string& key) const { return parse_real(key, raw(key)); }
bool RunConfig::get_bool(const std::string& key) const { return parse_bool(key, raw(key)); }
std::string RunConfig::get_string(const std::string& key) const { return raw(key); }
std::vector<int> RunConfig::get_int_list(const std::string& key) const { return parse_list(key, raw(key)); }

void RunConfig::validate() const {
  if (get_double("schedule.beta_min") <= 0.0 || get_double("schedule.beta_max") >= 1.0 ||
      get_double("schedule.beta_min") > get_double("schedule.beta_max")) {
    throw ConfigError("schedule: need 0 < beta_min <= beta_max < 1");
  }
  if (get_int("schedule.inference_steps") > get_int("schedule.train_timesteps")) {
    throw ConfigError("schedule: inference_steps exceeds train_timesteps");
  }
  if (get_int("textopt.opt_timestep") >= get_int("schedule.inference_steps")) {
    throw ConfigError("textopt.opt_timestep must be below schedule.inference_steps");
  }
  if (get_int("plot.step") >= get_int("schedule.inference_steps")) {
    throw ConfigError("plot.step must be below schedule.inference_steps");
  }
  if (get_int("guidance.stop_step") > get_int("schedule.inference_steps")) {
    throw ConfigError("guidance.stop_step exceeds schedule.inference_steps");
  }
  if (!(get_double("textopt.sigma_scale") > 0.0)) throw ConfigError("textopt.sigma_scale must be > 0");
  if (!(get_double("finetune.learning_rate") > 0.0) || !(get_double("pretrain.learning_rate") > 0.0)) {
    throw ConfigError("learning rates must be > 0");
  }
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::string RunConfig::hash() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::filesystem::path RunConfig::path(const std::string& key) const {
  const std::string v = get_string(key);
  if (!v.empty()) return v;
  const std::filesystem::path fixture = get_string("paths.fixture");
  if (key == "paths.source_annotations") return fixture / "source" / "annotations.json";
  if (key == "paths.source_images") return fixture / "source" / "images";
  if (key == "paths.target_annotations") return fixture / "target" / "annotations.json";
  if (key == "paths.target_images") return fixture / "target" / "images";
  throw ConfigError(key + " is empty");
}

ScheduleParams RunConfig::schedule_params() const {
  return {static_cast<int>(get_int("schedule.train_timesteps")), static_cast<int>(get_int("schedule.inference_steps")),
          get_double("schedule.beta_min"), get_double("schedule.beta_max")};
}

GuidanceConfig RunConfig::guidance() const {
  GuidanceConfig g;
  g.beta_object = get_double("guidance.beta_object");
  g.beta_background = get_double("guidance.beta_background");
  g.stop_step = static_cast<int>(get_int("guidance.stop_step"));
  g.target_layers = get_int_list("guidance.target_layers");
  g.control_scale = get_double("guidance.control_scale");
  g.opt_timestep = static_cast<int>(get_int("textopt.opt_timestep"));
  return g;
}

TextOptConfig RunConfig::textopt() const {
  TextOptConfig t;
  t.learning_rate = get_double("textopt.learning_rate");
  t.max_steps = static_cast<int>(get_int("textopt.max_steps"));
  t.opt_step = static_cast<int>(get_int("textopt.opt_timestep"));
  t.seed = static_cast<std::uint64_t>(get_int("textopt.seed"));
  t.sigma_scale = get_double("textopt.sigma_scale");
  t.control_scale = get_double("guidance.control_scale");
  return t;
}

FinetuneConfig RunConfig::finetune() const {
  FinetuneConfig f;
  f.max_steps = static_cast<int>(get_int("finetune.max_steps"));
  f.batch_size = static_cast<int>(get_int("finetune.batch_size"));
  f.learning_rate = get_double("finetune.learning_rate");
  f.loss_threshold = get_double("finetune.loss_threshold");
  f.augment = get_bool("finetune.augment");
  f.seed = static_cast<std::uint64_t>(get_int("finetune.seed"));
  return f;
}

FinetuneConfig RunConfig::pretrain() const {
  FinetuneConfig f;
  f.max_steps = static_cast<int>(get_int("pretrain.steps"));
  f.batch_size = static_cast<int>(get_int("pretrain.batch_size"));
  f.learning_rate = get_double("pretrain.learning_rate");
  f.seed = static_cast<std::uint64_t>(get_int("pretrain.seed"));
  f.attention_weight = get_double("pretrain.attention_weight");
  f.guided_fraction = get_double("pretrain.guided_fraction");
  f.augment = false;
  f.control_scale = 0.0;
  return f;
}

}  // namespace agile
