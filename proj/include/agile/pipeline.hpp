#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "agile/attention.hpp"
#include "agile/backbone.hpp"
#include "agile/data.hpp"
#include "agile/scheduler.hpp"

namespace agile {

struct TranslationJob {
  const Backbone* source_model = nullptr;  // may be null when only sampling
  const Backbone* target_model = nullptr;
  TextEmbedding e_star;
  GuidanceConfig guidance;
  NoiseSchedule schedule;
  std::uint64_t seed = 0;
  double sigma_scale = 0.5;
  std::string config_hash;
  bool record_maps = false;

  // Throws ConfigError on a missing target model, mismatched models or embedding,
  // or guidance layers the target model does not have.
  void validate() const;
};

struct TranslatedSample {
  Tensor image;  // {3, H, W} in [0, 1]
  std::vector<BoundingBox> transferred_boxes;
  std::string source_id;
  int source_image_id = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  int edits_applied = 0;
  double coverage = 0.0;  // output_coverage of the image with the job's embedding
  std::vector<GuidanceHook::UsedMap> maps;  // filled when job.record_maps
  std::vector<std::string> warnings;
};

// Seeded standard-normal initial latent.
Tensor initial_latent(const std::vector<int>& shape, std::uint64_t seed);

// Token-0 attention coverage of the source boxes when `model` reads `image`
// noised to step guidance.opt_timestep (noise seeded from `seed`), conditioned
// on the source image, over all decoder layers.
double output_coverage(const Backbone& model, const Tensor& image, const LabeledImage& source, const TextEmbedding& e,
                       const NoiseSchedule& schedule, const GuidanceConfig& guidance, std::uint64_t seed);

// DDIM sampling on the target model conditioned on the source image, with
// attention guidance toward the source boxes while step < stop_step.
TranslatedSample guided_translate(const LabeledImage& source, const TranslationJob& job);

enum class AblationMode { full, no_text_optim, no_guidance };

AblationMode parse_ablation_mode(const std::string& s);
std::string to_string(AblationMode mode);

struct AblationInputs {
  std::vector<LabeledImage> sources;
  TranslationJob job;  // carries e*
  TextEmbedding e0;    // used by no_text_optim
};

// Job actually run for `mode`.
TranslationJob ablation_job(AblationMode mode, const AblationInputs& inputs);

// Sample i uses seed job.seed + i.
std::vector<TranslatedSample> ablation_run(AblationMode mode, const AblationInputs& inputs);

// Writes images, a COCO annotation file carrying the transferred boxes, and a
// provenance sidecar per sample.
void write_translated(const std::vector<TranslatedSample>& samples, const std::filesystem::path& out_dir);

}  // namespace agile
