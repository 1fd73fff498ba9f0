#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include <json.hpp>

#include "agile/data.hpp"
#include "agile/eval.hpp"
#include "support.hpp"

using namespace agile;
using namespace agile::testing;
namespace fs = std::filesystem;

namespace {

FeatureSet gaussian_set(int n, std::vector<double> mean, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  FeatureSet out(static_cast<std::size_t>(n), FeatureVector(mean.size()));
  for (auto& v : out)
    for (std::size_t k = 0; k < mean.size(); ++k) v[k] = mean[k] + g(rng);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("FID of identical sets is zero") {
  const auto a = gaussian_set(50, {0, 0, 0, 0}, 1);
  CHECK(compute_fid(a, a) < 1e-6);
}

TEST_CASE("FID between unit Gaussians offset by (3, 4) is about 25") {
  const auto a = gaussian_set(10000, {0, 0}, 2), b = gaussian_set(10000, {3, 4}, 3);
  const double f = compute_fid(a, b);
  MESSAGE("fid " << f);
  CHECK(std::abs(f - 25.0) <= 0.5);
}

TEST_CASE("FID is symmetric, non-negative and needs d+1 samples") {
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = gaussian_set(40, {0, 1, 0}, 10 + trial), b = gaussian_set(60, {0.5, 0, 2}, 20 + trial);
    CHECK(std::abs(compute_fid(a, b) - compute_fid(b, a)) < 1e-6);
    CHECK(compute_fid(a, b) >= 0.0);
  }
  CHECK_THROWS(compute_fid(gaussian_set(3, {0, 0, 0}, 1), gaussian_set(30, {0, 0, 0}, 2)));
  CHECK_NOTHROW(compute_fid(gaussian_set(4, {0, 0, 0}, 1), gaussian_set(4, {0, 0, 0}, 2)));
  CHECK_THROWS_AS(compute_fid(gaussian_set(10, {0, 0}, 1), gaussian_set(10, {0, 0, 0}, 2)), ShapeError);
}

TEST_CASE("feature extractor is deterministic with a fixed dimension") {
  const PooledProjectionExtractor ex(16, 4, 5);
  const Tensor img = random_image(16, 3);
  CHECK(ex.dim() == 16);
  CHECK(ex.embed(img).size() == 16);
  CHECK(ex.embed(img) == PooledProjectionExtractor(16, 4, 5).embed(img));
  CHECK(ex.embed(img) != PooledProjectionExtractor(16, 4, 6).embed(img));
}

TEST_CASE("coverage examples and bounds") {
  const MapGrid uniform(4, 4, 1.0);
  CHECK(attention_coverage(uniform, {{0, 0, 8, 16, 0}}, {16, 16}).fraction == doctest::Approx(0.5));
  MapGrid inside(4, 4, 0.0);
  inside.at(1, 1) = 3.0;
  CHECK(attention_coverage(inside, {{0, 0, 8, 8, 0}}, {16, 16}).fraction == 1.0);
  const auto zero = attention_coverage(MapGrid(4, 4, 0.0), {{0, 0, 8, 8, 0}}, {16, 16});
  CHECK(zero.fraction == 0.0);
  CHECK(zero.degenerate);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor r = random_tensor({5, 7}, 30 + trial, 0.0, 1.0);
    const double c = attention_coverage(MapGrid(5, 7, r.data), {{static_cast<double>(trial % 9), 2, 5, 6, 0}}, {16, 16}).fraction;
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
  }
}

TEST_CASE("coverage window over recorded guidance maps") {
  std::vector<GuidanceHook::UsedMap> maps;
  MapGrid in(4, 4, 0.0), out(4, 4, 0.0);
  in.at(0, 0) = 1.0;
  out.at(3, 3) = 1.0;
  maps.push_back({0, 0, true, in});
  maps.push_back({1, 0, true, out});
  maps.push_back({5, 0, false, out});
  const std::vector<BoundingBox> box{{0, 0, 4, 4, 0}};
  CHECK(*window_coverage(maps, 0, 2, box, {16, 16}) == doctest::Approx(0.5));
  CHECK(*window_coverage(maps, 0, 1, box, {16, 16}) == doctest::Approx(1.0));
  CHECK_FALSE(window_coverage(maps, 2, 5, box, {16, 16}).has_value());
}

TEST_CASE("domain score separates the toy domains") {
  const auto fx = generate_toy_fixture(40, 11);
  for (const auto& li : fx.target.images) CHECK(domain_score(li.image) >= 0.5);
  for (const auto& li : fx.source.images) CHECK(domain_score(li.image) < 0.5);
  const Tensor black({3, 16, 16}, 0.0);
  const double s = domain_score(black);
  CHECK(s >= 0.0);
  CHECK(s <= 1.0);
  CHECK(domain_score(black) == s);
}

TEST_CASE("foreground centroid finds the fixture disc") {
  const auto fx = generate_toy_fixture(20, 12);
  for (const auto& li : fx.source.images) {
    const auto c = foreground_centroid(li.image);
    REQUIRE(c.has_value());
    CHECK(li.boxes[0].contains(c->first, c->second));
  }
  for (const auto& li : fx.target.images) CHECK(foreground_centroid(li.image).has_value());
  CHECK_FALSE(foreground_centroid(Tensor({3, 16, 16}, 0.4)).has_value());
}

TEST_CASE("plot panels, file output and determinism") {
  const auto dir = fs::temp_directory_path() / "agile_test_eval_plot";
  fs::remove_all(dir);
  PlotInput single;
  single.maps = {MapGrid(4, 4, 0.5)};
  CHECK(plot_maps(single, dir / "one.png") == 1);
  CHECK(fs::file_size(dir / "one.png") > 0);

  PlotInput full;
  full.source_image = random_image(16, 1);
  full.query_map = build_query_map({{2, 2, 6, 6, 0}}, {16, 16}, {16, 16}).grid;
  full.boxes = {{2, 2, 6, 6, 0}};
  for (int n = 1; n <= 3; ++n) {
    full.maps.push_back(MapGrid(4 * n, 4 * n, 0.1 * n));
    CHECK(plot_maps(full, dir / ("p" + std::to_string(n) + ".png")) == n + 2);
  }
  plot_maps(full, dir / "again.png");
  CHECK(slurp(dir / "p3.png") == slurp(dir / "again.png"));
  CHECK_THROWS_AS(plot_maps(PlotInput{}, dir / "none.png"), ConfigError);
  CHECK_THROWS(plot_maps(single, fs::path("/proc/agile_unwritable/x.png")));
}

TEST_CASE("metrics report carries every field") {
  const EvalReport r{1.5, 0.25, 0.75, "abc"};
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j.at("fid") == 1.5);
  CHECK(j.at("coverage_mean") == 0.25);
  CHECK(j.at("domain_score_rate") == 0.75);
  CHECK(j.at("config_hash") == "abc");
}
