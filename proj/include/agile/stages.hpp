#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "agile/config.hpp"
#include "agile/eval.hpp"
#include "agile/pipeline.hpp"
#include "agile/toy_backbone.hpp"

// File-backed pipeline stages shared by the CLI and the end-to-end tests. Each
// stage reads its inputs from the paths in the config, throws
// MissingArtifactError when an upstream output is absent, and stamps what it
// writes with the config hash.
namespace agile::stages {

// Artifact locations derived from the config.
struct Layout {
  std::filesystem::path base_model;
  std::filesystem::path source_model;
  std::filesystem::path target_model;
  std::filesystem::path embedding;
  std::filesystem::path translate_dir;
  std::filesystem::path ablate_root;

  explicit Layout(const RunConfig& cfg);
  std::filesystem::path ablate_dir(AblationMode mode) const;
};

ToyBackboneConfig model_config(const RunConfig& cfg);

void make_fixture(const RunConfig& cfg, std::ostream& log);

struct FinetuneSummary {
  bool pretrained = false;  // false when an existing base model was reused
  FinetuneResult source;
  FinetuneResult target;
};

// Trains the captioned base model unless one exists, then fine-tunes a copy on
// each domain with that domain's prompt.
FinetuneSummary finetune(const RunConfig& cfg, std::ostream& log);

// Optimizes the object token on the first textopt.n_images labeled source
// images, starting from the target prompt, against the source model.
OptimizationResult optimize_embedding(const RunConfig& cfg, std::ostream& log);

// Translates source images translate.first .. (+n_samples, 0 = all) on the
// target model and writes them to out_dir.
std::vector<TranslatedSample> translate(const RunConfig& cfg, AblationMode mode, const std::filesystem::path& out_dir,
                                        std::ostream& log, bool record_maps = false);

// FID of the translated set against the target images, mean coverage and the
// target-domain rate; also written to <dir>/metrics.json.
EvalReport evaluate(const RunConfig& cfg, const std::filesystem::path& translated_dir, std::ostream& log);

// Token-0 maps of every decoder layer at denoising step plot.step for source
// translate.first + plot.sample. Returns the panel count.
int plot(const RunConfig& cfg, const std::filesystem::path& out_path, std::ostream& log);

}  // namespace agile::stages
