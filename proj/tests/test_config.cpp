#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include "agile/config.hpp"

using namespace agile;
namespace fs = std::filesystem;

TEST_CASE("defaults carry the method's settings") {
  const RunConfig cfg;
  CHECK(cfg.get_int("schedule.train_timesteps") == 1000);
  CHECK(cfg.get_int("schedule.inference_steps") == 50);
  CHECK(cfg.get_double("schedule.beta_min") == 0.00085);
  CHECK(cfg.get_double("schedule.beta_max") == 0.012);
  CHECK(cfg.get_int("textopt.opt_timestep") == 30);
  CHECK(cfg.get_double("textopt.learning_rate") == 0.01);
  CHECK(cfg.get_int("textopt.max_steps") == 200);
  CHECK(cfg.get_int("textopt.n_images") == 5);
  CHECK(cfg.get_int("finetune.max_steps") == 500);
  CHECK(cfg.get_double("finetune.learning_rate") == 0.001);
  CHECK(cfg.get_int("guidance.stop_step") == 15);
  CHECK(cfg.get_int_list("guidance.target_layers") == std::vector<int>{0, 1, 2});
  const GuidanceConfig g = cfg.guidance();
  CHECK(g.beta_object == 1.0);
  CHECK(g.beta_background == 1.0);
  CHECK(g.opt_timestep == 30);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("key=value and JSON forms parse to the same config") {
  const auto a = RunConfig::parse("# comment\nguidance.stop_step = 20\n\ntextopt.learning_rate=0.05  # lr\n"
                                  "guidance.target_layers = 1, 2\n");
  const auto b = RunConfig::parse(
      R"({"guidance": {"stop_step": 20, "target_layers": [1, 2]}, "textopt": {"learning_rate": 0.05}})");
  CHECK(a.get_int("guidance.stop_step") == 20);
  CHECK(a.get_double("textopt.learning_rate") == 0.05);
  CHECK(a.get_int_list("guidance.target_layers") == std::vector<int>{1, 2});
  CHECK(a.canonical() == b.canonical());
  CHECK(a.hash() == b.hash());
}

TEST_CASE("hash is stable, canonical and sensitive") {
  RunConfig a, b;
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  b.set("textopt.learning_rate", "1e-2");
  CHECK(a.hash() == b.hash());
  b.set("translate.seed", "101");
  CHECK(a.hash() != b.hash());
  b.set("translate.seed", "100");
  CHECK(a.hash() == b.hash());
}

TEST_CASE("invalid settings are rejected") {
  RunConfig cfg;
  CHECK_THROWS_AS(cfg.set("guidance.no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("textopt.max_steps", "many"), ConfigError);
  CHECK_THROWS_AS(cfg.set("textopt.max_steps", "-1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("finetune.augment", "maybe"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("guidance.stop_step 3"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("{\"guidance\": "), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("guidance.stop_step = 51"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("textopt.opt_timestep = 50"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("schedule.beta_min = 0.02"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/agile.cfg"), MissingArtifactError);
}

TEST_CASE("fixture paths derive from paths.fixture unless set") {
  RunConfig cfg;
  cfg.set("paths.fixture", "/data/fx");
  CHECK(cfg.path("paths.source_annotations") == fs::path("/data/fx/source/annotations.json"));
  CHECK(cfg.path("paths.target_images") == fs::path("/data/fx/target/images"));
  cfg.set("paths.target_images", "/elsewhere");
  CHECK(cfg.path("paths.target_images") == fs::path("/elsewhere"));
}

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(AGILE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("command-line exit codes") {
  const auto dir = fs::temp_directory_path() / "agile_test_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string paths = " --set paths.fixture=" + (dir / "fx").string() + " --set paths.models=" +
                            (dir / "models").string() + " --set paths.embedding=" + (dir / "emb").string() +
                            " --set paths.output=" + (dir / "out").string();
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("no-such-command") == 2);
  CHECK(run_cli("--set bogus.key=1 make-fixture" + paths) == 2);
  CHECK(run_cli("--set guidance.stop_step=99 make-fixture" + paths) == 2);
  CHECK(run_cli("ablate" + paths) == 2);
  CHECK(run_cli("translate" + paths) == 3);
  CHECK(run_cli("optimize-embedding" + paths) == 3);
  CHECK(run_cli("evaluate" + paths) == 3);
  CHECK(run_cli("--set fixture.n_images=8 make-fixture" + paths) == 0);
  CHECK(fs::exists(dir / "fx" / "source" / "annotations.json"));
  CHECK(run_cli("translate" + paths) == 3);
  {
    std::ofstream(dir / "bad.json") << "{\"fixture\": {\"n_images\": \"x\"}}";
  }
  CHECK(run_cli("--config " + (dir / "bad.json").string() + " make-fixture" + paths) == 2);
}
