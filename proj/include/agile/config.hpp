#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "agile/attention.hpp"
#include "agile/finetune.hpp"
#include "agile/scheduler.hpp"
#include "agile/textopt.hpp"

namespace agile {

// Flat key namespace with stage prefixes ("guidance.stop_step"). Values are
// validated on every set; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  // key=value lines ('#' comments) or a JSON object whose nesting maps to dots.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& raw(const std::string& key) const;
  bool has_key(const std::string& key) const;

  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // Cross-key checks (e.g. beta_min <= beta_max, stop_step <= inference_steps).
  void validate() const;

  // Canonical "key=value" lines, sorted by key.
  std::string canonical() const;
  // FNV-1a 64 of canonical(), as 16 hex digits.
  std::string hash() const;

  std::filesystem::path path(const std::string& key) const;

  ScheduleParams schedule_params() const;
  GuidanceConfig guidance() const;
  TextOptConfig textopt() const;
  FinetuneConfig finetune() const;
  FinetuneConfig pretrain() const;

  static std::vector<std::string> keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace agile
