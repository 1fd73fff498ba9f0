#include "agile/stages.hpp"

#include <fstream>
#include <ostream>

#include <json.hpp>

#include "agile/checkpoint.hpp"
#include "agile/data.hpp"

namespace agile::stages {

namespace fs = std::filesystem;

namespace {

void require(const fs::path& p, const std::string& what, const std::string& stage) {
  if (!fs::exists(p)) {
    throw MissingArtifactError(what + " not found at " + p.string() + " (run '" + stage + "' first)");
  }
}

ToyBackbone load_model(const fs::path& dir, const std::string& what) {
  require(dir / "manifest.json", what, "finetune");
  return ToyBackbone::load(dir);
}

DomainDataset load_source(const RunConfig& cfg) {
  const fs::path ann = cfg.path("paths.source_annotations");
  require(ann, "source annotations", "make-fixture");
  return load_coco(ann, cfg.path("paths.source_images"), "source", true);
}

DomainDataset load_target(const RunConfig& cfg) {
  const fs::path ann = cfg.path("paths.target_annotations");
  require(ann, "target annotations", "make-fixture");
  return load_coco(ann, cfg.path("paths.target_images"), "target", false);
}

nlohmann::json stamp(const RunConfig& cfg, const std::string& stage) {
  return {{"config_hash", cfg.hash()}, {"stage", stage}};
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace

Layout::Layout(const RunConfig& cfg) {
  const fs::path models = cfg.get_string("paths.models");
  base_model = models / "base";
  source_model = models / "source";
  target_model = models / "target";
  embedding = cfg.get_string("paths.embedding");
  const fs::path out = cfg.get_string("paths.output");
  translate_dir = out / "translate";
  ablate_root = out / "ablate";
}

fs::path Layout::ablate_dir(AblationMode mode) const { return ablate_root / to_string(mode); }

ToyBackboneConfig model_config(const RunConfig& cfg) {
  ToyBackboneConfig m;
  m.image_size = static_cast<int>(cfg.get_int("fixture.image_size"));
  m.seed = static_cast<std::uint64_t>(cfg.get_int("model.seed"));
  return m;
}

void make_fixture(const RunConfig& cfg, std::ostream& log) {
  const fs::path dir = cfg.get_string("paths.fixture");
  const auto fx = make_toy_fixture(dir, static_cast<int>(cfg.get_int("fixture.n_images")),
                                   static_cast<std::uint64_t>(cfg.get_int("fixture.seed")),
                                   static_cast<int>(cfg.get_int("fixture.image_size")));
  write_json(dir / "fixture.json", {{"n_images", fx.source.images.size()}, {"config_hash", cfg.hash()}});
  log << "fixture: " << fx.source.images.size() << " source and " << fx.target.images.size() << " target images in "
      << dir.string() << '\n';
}

FinetuneSummary finetune(const RunConfig& cfg, std::ostream& log) {
  const Layout layout(cfg);
  const DomainDataset source = load_source(cfg);
  const DomainDataset target = load_target(cfg);
  const NoiseSchedule schedule = make_schedule(cfg.schedule_params());
  FinetuneSummary summary;

  ToyBackbone base(model_config(cfg));
  if (fs::exists(layout.base_model / "manifest.json")) {
    base = ToyBackbone::load(layout.base_model);
    log << "finetune: reusing base model " << layout.base_model.string() << '\n';
  } else {
    const auto corpus = generate_caption_corpus(static_cast<int>(cfg.get_int("pretrain.corpus_size")),
                                                static_cast<std::uint64_t>(cfg.get_int("pretrain.corpus_seed")),
                                                base.config().image_size);
    log << "finetune: pretraining base model for " << cfg.get_int("pretrain.steps") << " steps\n";
    const auto r = pretrain_captioned(base, corpus, schedule, cfg.pretrain());
    base.save(layout.base_model, stamp(cfg, "pretrain"));
    summary.pretrained = true;
    if (!r.loss_curve.empty()) log << "finetune: base loss " << r.loss_curve.back() << '\n';
  }
  if (base.image_size().height != source.images.front().size().height) {
    throw ConfigError("base model image size does not match the fixture");
  }

  auto train = [&](const DomainDataset& ds, const std::vector<int>& prompt, const fs::path& out) {
    ToyBackbone m = base;
    const auto r = finetune_domain(m, ds, m.text_encode(prompt), schedule, cfg.finetune());
    nlohmann::json extra = stamp(cfg, "finetune");
    extra["domain"] = ds.name;
    extra["prompt"] = prompt;
    extra["steps"] = r.steps;
    extra["final_loss"] = r.loss_curve.empty() ? 0.0 : r.loss_curve.back();
    m.save(out, extra);
    log << "finetune: " << ds.name << " model, " << r.steps << " steps, last loss "
        << (r.loss_curve.empty() ? 0.0 : r.loss_curve.back()) << '\n';
    return r;
  };
  summary.source = train(source, toy_source_prompt(), layout.source_model);
  summary.target = train(target, toy_target_prompt(), layout.target_model);
  return summary;
}

OptimizationResult optimize_embedding(const RunConfig& cfg, std::ostream& log) {
  const Layout layout(cfg);
  const ToyBackbone source_model = load_model(layout.source_model, "source model");
  const ToyBackbone target_model = load_model(layout.target_model, "target model");
  const DomainDataset source = load_source(cfg);
  const auto n = static_cast<std::size_t>(cfg.get_int("textopt.n_images"));
  if (source.images.size() < n) throw ConfigError("textopt.n_images exceeds the labeled source images");
  const std::vector<LabeledImage> images(source.images.begin(), source.images.begin() + static_cast<long>(n));

  const TextEmbedding e0 = target_model.text_encode(toy_target_prompt());
  const NoiseSchedule schedule = make_schedule(cfg.schedule_params());
  OptimizationResult r = optimize_embedding(e0, images, source_model, schedule, cfg.textopt());

  nlohmann::json extra = stamp(cfg, "optimize-embedding");
  std::vector<std::string> ids;
  for (const auto& im : images) ids.push_back(im.identifier);
  extra["images"] = ids;
  extra["seed"] = cfg.get_int("textopt.seed");
  extra["opt_timestep"] = cfg.get_int("textopt.opt_timestep");
  extra["initial_loss"] = r.state.loss_history.empty() ? r.best_loss : r.state.loss_history.front();
  extra["final_loss"] = r.best_loss;
  extra["warnings"] = r.warnings;
  save_embedding(layout.embedding, r.best, extra);
  log << "optimize-embedding: loss " << extra["initial_loss"].get<double>() << " -> " << r.best_loss << '\n';
  for (const auto& w : r.warnings) log << "warning: " << w << '\n';
  return r;
}

std::vector<TranslatedSample> translate(const RunConfig& cfg, AblationMode mode, const fs::path& out_dir,
                                        std::ostream& log, bool record_maps) {
  const Layout layout(cfg);
  const ToyBackbone target_model = load_model(layout.target_model, "target model");
  const DomainDataset source = load_source(cfg);

  AblationInputs in;
  in.e0 = target_model.text_encode(toy_target_prompt());
  if (mode == AblationMode::no_text_optim) {
    in.job.e_star = in.e0;
  } else {
    require(layout.embedding / "manifest.json", "optimized embedding", "optimize-embedding");
    in.job.e_star = load_embedding(layout.embedding);
  }
  in.job.target_model = &target_model;
  in.job.guidance = cfg.guidance();
  in.job.schedule = make_schedule(cfg.schedule_params());
  in.job.seed = static_cast<std::uint64_t>(cfg.get_int("translate.seed"));
  in.job.sigma_scale = cfg.get_double("textopt.sigma_scale");
  in.job.config_hash = cfg.hash();
  in.job.record_maps = record_maps;

  const auto first = static_cast<std::size_t>(cfg.get_int("translate.first"));
  const auto requested = static_cast<std::size_t>(cfg.get_int("translate.n_samples"));
  if (first >= source.images.size()) throw ConfigError("translate.first is past the last source image");
  const std::size_t count = requested == 0 ? source.images.size() - first : requested;
  if (first + count > source.images.size()) throw ConfigError("translate range exceeds the source images");
  in.sources.assign(source.images.begin() + static_cast<long>(first),
                    source.images.begin() + static_cast<long>(first + count));

  auto samples = ablation_run(mode, in);
  write_translated(samples, out_dir);
  log << "translate (" << to_string(mode) << "): " << samples.size() << " images in " << out_dir.string() << '\n';
  for (const auto& s : samples)
    for (const auto& w : s.warnings) log << "warning: " << w << '\n';
  return samples;
}

EvalReport evaluate(const RunConfig& cfg, const fs::path& translated_dir, std::ostream& log) {
  const fs::path ann = translated_dir / "annotations.json";
  require(ann, "translated images", "translate");
  const DomainDataset translated = load_coco(ann, translated_dir / "images", "translated", true);
  const DomainDataset target = load_target(cfg);
  if (translated.images.empty()) throw ConfigError("no translated images in " + translated_dir.string());

  const PooledProjectionExtractor extractor(static_cast<int>(cfg.get_int("eval.feature_dim")),
                                            static_cast<int>(cfg.get_int("eval.pool")),
                                            static_cast<std::uint64_t>(cfg.get_int("eval.feature_seed")));
  std::vector<Tensor> a, b;
  for (const auto& im : translated.images) a.push_back(im.image);
  for (const auto& im : target.images) b.push_back(im.image);

  EvalReport report;
  report.fid = compute_fid(embed_all(extractor, a), embed_all(extractor, b));
  double coverage = 0.0;
  int in_domain = 0;
  for (const auto& im : translated.images) {
    const fs::path prov = translated_dir / "provenance" / (im.identifier + ".json");
    require(prov, "provenance for " + im.identifier, "translate");
    std::ifstream is(prov);
    coverage += nlohmann::json::parse(is).at("coverage").get<double>();
    if (domain_score(im.image) >= 0.5) ++in_domain;
  }
  const auto n = static_cast<double>(translated.images.size());
  report.coverage_mean = coverage / n;
  report.domain_score_rate = in_domain / n;
  report.config_hash = cfg.hash();

  std::ofstream os(translated_dir / "metrics.json");
  if (!os) throw Error("cannot write metrics in " + translated_dir.string());
  os << report.to_json();
  log << "evaluate: fid " << report.fid << " coverage " << report.coverage_mean << " domain rate "
      << report.domain_score_rate << '\n';
  return report;
}

int plot(const RunConfig& cfg, const fs::path& out_path, std::ostream& log) {
  RunConfig one = cfg;
  const long long sample = cfg.get_int("plot.sample");
  one.set("translate.first", std::to_string(cfg.get_int("translate.first") + sample));
  one.set("translate.seed", std::to_string(cfg.get_int("translate.seed") + sample));
  one.set("translate.n_samples", "1");

  const Layout layout(cfg);
  const ToyBackbone target_model = load_model(layout.target_model, "target model");
  const DomainDataset source = load_source(one);
  const auto index = static_cast<std::size_t>(one.get_int("translate.first"));
  if (index >= source.images.size()) throw ConfigError("plot.sample is past the last source image");
  const LabeledImage& src = source.images[index];

  require(layout.embedding / "manifest.json", "optimized embedding", "optimize-embedding");
  TranslationJob job;
  job.target_model = &target_model;
  job.e_star = load_embedding(layout.embedding);
  job.guidance = cfg.guidance();
  job.schedule = make_schedule(cfg.schedule_params());
  job.seed = static_cast<std::uint64_t>(one.get_int("translate.seed"));
  job.sigma_scale = cfg.get_double("textopt.sigma_scale");
  job.config_hash = cfg.hash();
  job.record_maps = true;
  const TranslatedSample t = guided_translate(src, job);

  PlotInput input;
  input.source_image = src.image;
  input.query_map = build_query_map(src.boxes, src.size(), src.size(), job.sigma_scale).grid;
  input.boxes = src.boxes;
  input.image_size = src.size();
  const int step = static_cast<int>(cfg.get_int("plot.step"));
  for (const auto& m : t.maps)
    if (m.step == step) input.maps.push_back(m.object_map);

  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  const int panels = plot_maps(input, out_path);
  fs::path sidecar = out_path;
  sidecar += ".json";
  write_json(sidecar, {{"source_id", src.identifier},
                       {"seed", job.seed},
                       {"step", step},
                       {"panels", panels},
                       {"config_hash", cfg.hash()}});
  log << "plot: " << panels << " panels in " << out_path.string() << '\n';
  return panels;
}

}  // namespace agile::stages
