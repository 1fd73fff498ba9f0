#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "agile/data.hpp"
#include "agile/stages.hpp"

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kConfigFailure = 2;
constexpr int kMissingArtifact = 3;

agile::RunConfig build_config(const std::string& path, const std::vector<std::string>& overrides) {
  agile::RunConfig cfg = path.empty() ? agile::RunConfig() : agile::RunConfig::load(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw agile::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-guided image translation with label transfer on a toy diffusion backbone"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "config file (key=value lines or JSON)");
  app.add_option("--set", overrides, "override one config key as key=value (repeatable)");

  auto* fixture = app.add_subcommand("make-fixture", "write the toy source and target datasets");
  auto* finetune = app.add_subcommand("finetune", "train the base model if needed and fine-tune both domains");
  auto* optimize = app.add_subcommand("optimize-embedding", "optimize the object token on labeled source images");
  auto* translate = app.add_subcommand("translate", "translate source images with attention guidance");
  bool no_text_optim = false;
  translate->add_flag("--no-text-optim", no_text_optim, "use the initial prompt embedding instead of e*");
  auto* ablate = app.add_subcommand("ablate", "run one ablation mode");
  std::string mode_name;
  ablate->add_option("--mode", mode_name, "full, no_text_optim or no_guidance")->required();
  auto* evaluate = app.add_subcommand("evaluate", "FID, coverage and domain rate of a translated set");
  std::string eval_dir, eval_mode;
  evaluate->add_option("--dir", eval_dir, "translated set (default: the translate output)");
  evaluate->add_option("--mode", eval_mode, "evaluate the ablation output of this mode");
  auto* plot = app.add_subcommand("plot", "plot the object-token maps of one sample");
  std::string plot_out;
  plot->add_option("--out", plot_out, "PNG path (default: <output>/maps.png)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigFailure;
  }

  try {
    const agile::RunConfig cfg = build_config(config_path, overrides);
    const agile::stages::Layout layout(cfg);
    std::cerr << "config hash " << cfg.hash() << '\n';
    if (*fixture) {
      agile::stages::make_fixture(cfg, std::cerr);
    } else if (*finetune) {
      agile::stages::finetune(cfg, std::cerr);
    } else if (*optimize) {
      agile::stages::optimize_embedding(cfg, std::cerr);
    } else if (*translate) {
      const auto mode = no_text_optim ? agile::AblationMode::no_text_optim : agile::AblationMode::full;
      agile::stages::translate(cfg, mode, layout.translate_dir, std::cerr);
    } else if (*ablate) {
      const auto mode = agile::parse_ablation_mode(mode_name);
      agile::stages::translate(cfg, mode, layout.ablate_dir(mode), std::cerr);
    } else if (*evaluate) {
      std::filesystem::path dir = layout.translate_dir;
      if (!eval_mode.empty()) dir = layout.ablate_dir(agile::parse_ablation_mode(eval_mode));
      if (!eval_dir.empty()) dir = eval_dir;
      std::cout << agile::stages::evaluate(cfg, dir, std::cerr).to_json();
    } else if (*plot) {
      const std::filesystem::path out =
          plot_out.empty() ? std::filesystem::path(cfg.get_string("paths.output")) / "maps.png"
                           : std::filesystem::path(plot_out);
      agile::stages::plot(cfg, out, std::cerr);
    }
  } catch (const agile::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const agile::MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return kMissingArtifact;
  } catch (const agile::DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << '\n';
    for (const auto& p : e.problems) std::cerr << "  " << p << '\n';
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return 0;
}
