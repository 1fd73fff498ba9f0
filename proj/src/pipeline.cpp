#include "agile/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include <json.hpp>

#include "agile/eval.hpp"
#include "agile/image_io.hpp"

namespace agile {

void TranslationJob::validate() const {
  if (target_model == nullptr) throw ConfigError("translation job has no target model");
  if (source_model != nullptr) {
    const Backbone& s = *source_model;
    const Backbone& t = *target_model;
    if (s.latent_shape() != t.latent_shape() || s.n_tokens() != t.n_tokens() ||
        s.decoder_cross_attention_layers() != t.decoder_cross_attention_layers() ||
        s.vocabulary_size() != t.vocabulary_size()) {
      throw ConfigError("source and target models do not share an architecture");
    }
  }
  if (e_star.tokens.rank() != 2 || e_star.n_tokens() != target_model->n_tokens()) {
    throw ConfigError("embedding has " + shape_string(e_star.tokens.shape) + " but the model expects " +
                      std::to_string(target_model->n_tokens()) + " tokens");
  }
  if (schedule.inference_steps() == 0) throw ConfigError("translation job has an empty schedule");
  guidance.validate(target_model->decoder_cross_attention_layers());
}

Tensor initial_latent(const std::vector<int>& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor x(shape);
  for (auto& v : x.data) v = gauss(rng);
  return x;
}

double output_coverage(const Backbone& model, const Tensor& image, const LabeledImage& source, const TextEmbedding& e,
                       const NoiseSchedule& schedule, const GuidanceConfig& guidance, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Tensor x0 = model.encode_image(image);
  Tensor eps(x0.shape);
  for (auto& v : eps.data) v = gauss(rng);
  const int t = schedule.timestep_for_step(guidance.opt_timestep);
  AttentionRecorder recorder;
  model.denoise(add_noise({x0, 0}, eps, t, schedule), e, {source.image, guidance.control_scale}, &recorder);
  return attention_coverage(recorder.record(), model.decoder_cross_attention_layers(), t, source.boxes, source.size())
      .fraction;
}

TranslatedSample guided_translate(const LabeledImage& source, const TranslationJob& job) {
  job.validate();
  const Backbone& model = *job.target_model;
  TranslatedSample out;
  out.source_id = source.identifier;
  out.source_image_id = source.image_id;
  out.seed = job.seed;
  out.config_hash = job.config_hash;
  out.transferred_boxes = source.boxes;
  if (source.boxes.empty()) out.warnings.push_back("source '" + source.identifier + "' has no boxes; guidance is a no-op");
  if (job.guidance.control_scale > 1.0) out.warnings.push_back("control_scale > 1 tends to degrade samples");

  const ImageSize size = source.size();
  GuidanceHook hook(job.guidance, build_query_map(source.boxes, size, size, job.sigma_scale), job.record_maps);
  const ConditioningInput cond{source.image, job.guidance.control_scale};

  Latent x{initial_latent(model.latent_shape(), job.seed), job.schedule.timestep_for_step(0)};
  for (int i = 0; i < job.schedule.inference_steps(); ++i) {
    hook.set_step(i);
    const int t = job.schedule.timestep_for_step(i);
    x.timestep = t;
    const Tensor eps = model.denoise(x, job.e_star, cond, &hook);
    x = ddim_step(x, eps, t, job.schedule.previous_timestep(i), job.schedule);
  }
  out.image = model.decode_latent(x.values);
  for (auto& v : out.image.data) v = std::clamp(v, 0.0, 1.0);
  out.edits_applied = hook.edits_applied();
  out.coverage = output_coverage(model, out.image, source, job.e_star, job.schedule, job.guidance, job.seed);
  if (job.record_maps) out.maps = hook.used_maps();
  return out;
}

AblationMode parse_ablation_mode(const std::string& s) {
  if (s == "full") return AblationMode::full;
  if (s == "no_text_optim") return AblationMode::no_text_optim;
  if (s == "no_guidance") return AblationMode::no_guidance;
  throw ConfigError("unknown ablation mode '" + s + "' (expected full, no_text_optim or no_guidance)");
}

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::full: return "full";
    case AblationMode::no_text_optim: return "no_text_optim";
    case AblationMode::no_guidance: return "no_guidance";
  }
  return "full";
}

TranslationJob ablation_job(AblationMode mode, const AblationInputs& inputs) {
  TranslationJob job = inputs.job;
  if (mode == AblationMode::no_text_optim) job.e_star = inputs.e0;
  if (mode == AblationMode::no_guidance) job.guidance.stop_step = 0;
  return job;
}

std::vector<TranslatedSample> ablation_run(AblationMode mode, const AblationInputs& inputs) {
  const TranslationJob base = ablation_job(mode, inputs);
  std::vector<TranslatedSample> out;
  out.reserve(inputs.sources.size());
  for (std::size_t i = 0; i < inputs.sources.size(); ++i) {
    TranslationJob job = base;
    job.seed = base.seed + i;
    out.push_back(guided_translate(inputs.sources[i], job));
  }
  return out;
}

void write_translated(const std::vector<TranslatedSample>& samples, const std::filesystem::path& out_dir) {
  const auto image_dir = out_dir / "images";
  const auto prov_dir = out_dir / "provenance";
  std::filesystem::create_directories(image_dir);
  std::filesystem::create_directories(prov_dir);
  DomainDataset ds;
  ds.name = "translated";
  ds.labeled = true;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    LabeledImage li;
    li.identifier = "translated_" + std::to_string(i) + ".png";
    li.image_id = static_cast<int>(i) + 1;
    li.image = s.image;
    li.boxes = s.transferred_boxes;
    ds.images.push_back(li);

    nlohmann::json prov = {{"image", li.identifier},
                           {"source_id", s.source_id},
                           {"source_image_id", s.source_image_id},
                           {"seed", s.seed},
                           {"config_hash", s.config_hash},
                           {"edits_applied", s.edits_applied},
                           {"coverage", s.coverage},
                           {"warnings", s.warnings}};
    std::ofstream os(prov_dir / (li.identifier + ".json"));
    if (!os) throw Error("cannot write provenance for " + li.identifier);
    os << prov.dump(2) << '\n';
  }
  write_coco(ds, out_dir / "annotations.json", image_dir);
}

}  // namespace agile
