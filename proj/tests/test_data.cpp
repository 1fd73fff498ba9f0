#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "agile/data.hpp"
#include "agile/image_io.hpp"
#include "support.hpp"

using namespace agile;
using namespace agile::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("agile_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace

TEST_CASE("COCO bbox passthrough, empty annotations and unknown image ids") {
  const auto dir = scratch("coco");
  write_png(dir / "a.png", Tensor({3, 64, 64}, 0.5));
  write_text(dir / "ok.json", R"({"images":[{"id":3,"file_name":"a.png","width":64,"height":64}],
    "annotations":[{"id":1,"image_id":3,"bbox":[10,20,30,40],"category_id":0}]})");
  const auto ds = load_coco(dir / "ok.json", dir);
  REQUIRE(ds.images.size() == 1);
  REQUIRE(ds.images[0].boxes.size() == 1);
  CHECK(ds.images[0].boxes[0] == BoundingBox{10, 20, 30, 40, 0});
  CHECK(ds.images[0].image_id == 3);
  CHECK(ds.images[0].image[0] == doctest::Approx(128.0 / 255.0));

  write_text(dir / "empty.json", R"({"images":[{"id":1,"file_name":"a.png","width":64,"height":64}],"annotations":[]})");
  const auto e = load_coco(dir / "empty.json", dir);
  CHECK(e.images.size() == 1);
  CHECK(e.images[0].boxes.empty());

  write_text(dir / "bad.json", R"({"images":[{"id":1,"file_name":"a.png","width":64,"height":64}],
    "annotations":[{"id":7,"image_id":42,"bbox":[1,1,2,2],"category_id":0},
                   {"id":8,"image_id":1,"bbox":[60,60,10,10],"category_id":0}]})");
  try {
    load_coco(dir / "bad.json", dir);
    FAIL("expected a dataset error");
  } catch (const DatasetError& err) {
    REQUIRE(err.problems.size() == 2);
    CHECK(err.problems[0].find("42") != std::string::npos);
    CHECK(err.problems[1].find("outside") != std::string::npos);
  }

  write_text(dir / "malformed.json", "{not json");
  CHECK_THROWS_AS(load_coco(dir / "malformed.json", dir), DatasetError);
  CHECK_THROWS_AS(load_coco(dir / "absent.json", dir), MissingArtifactError);
  write_text(dir / "nofile.json", R"({"images":[{"id":1,"file_name":"zz.png","width":4,"height":4}]})");
  CHECK_THROWS_AS(load_coco(dir / "nofile.json", dir), DatasetError);
}

TEST_CASE("COCO write then load is the identity on boxes and ids") {
  const auto dir = scratch("roundtrip");
  DomainDataset ds;
  ds.name = "rt";
  for (int i = 0; i < 4; ++i) {
    LabeledImage li;
    li.identifier = "img_" + std::to_string(i) + ".png";
    li.image_id = 10 + i;
    li.image = quantize8(random_image(16, i));
    for (int k = 0; k <= i % 3; ++k) li.boxes.push_back({1.5 + k, 2.25, 3.0 + i, 4.0, 0});
    ds.images.push_back(li);
  }
  write_coco(ds, dir / "ann.json", dir / "images");
  const auto back = load_coco(dir / "ann.json", dir / "images", "rt");
  REQUIRE(back.images.size() == ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    CHECK(back.images[i].image_id == ds.images[i].image_id);
    CHECK(back.images[i].identifier == ds.images[i].identifier);
    CHECK(back.images[i].boxes == ds.images[i].boxes);
    for (std::size_t k = 0; k < ds.images[i].image.size(); ++k) CHECK(std::abs(back.images[i].image[k] - ds.images[i].image[k]) < 1e-12);
  }
}

TEST_CASE("augmentation: identity draws, range, dimensions and determinism") {
  const Tensor img = random_image(16, 5);
  CHECK(apply_augment(img, AugmentParams{}).data == img.data);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Tensor a = augment(img, s);
    CHECK(a.shape == img.shape);
    for (double v : a.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(augment(img, s).data == a.data);
    const auto p = sample_augment(s);
    CHECK(p.crop_scale >= 0.8);
    CHECK(p.crop_scale <= 1.0);
    CHECK(std::abs(p.brightness - 1.0) <= 0.2);
    CHECK(std::abs(p.contrast - 1.0) <= 0.2);
  }
  AugmentParams flip;
  flip.flip = true;
  const Tensor f = apply_augment(img, flip);
  CHECK(f.at(1, 3, 0) == doctest::Approx(img.at(1, 3, 15)));
}

TEST_CASE("toy fixture contract") {
  const auto fx = generate_toy_fixture(12, 7);
  REQUIRE(fx.source.images.size() == 12);
  REQUIRE(fx.target.images.size() == 12);
  CHECK(fx.source.labeled);
  CHECK_FALSE(fx.target.labeled);
  for (const auto& li : fx.source.images) {
    REQUIRE(li.boxes.size() >= 1);
    // Centroid of the disc pixels, which are darker than the white background.
    double sx = 0, sy = 0, n = 0;
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        if (li.image.at(0, y, x) < 0.9) {
          sx += x + 0.5;
          sy += y + 0.5;
          n += 1;
        }
    REQUIRE(n > 0);
    CHECK(std::abs(sx / n - li.boxes[0].center_x()) <= 1.0);
    CHECK(std::abs(sy / n - li.boxes[0].center_y()) <= 1.0);
  }
  CHECK_THROWS_AS(generate_toy_fixture(4, 1), ConfigError);
}

TEST_CASE("fixture regeneration is byte-identical") {
  const auto a = scratch("fx_a"), b = scratch("fx_b");
  make_toy_fixture(a, 6, 3);
  make_toy_fixture(b, 6, 3);
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    CHECK(slurp(entry.path()) == slurp(b / rel));
  }
  const auto loaded = load_coco(a / "source" / "annotations.json", a / "source" / "images");
  CHECK(loaded.images.size() == 6);
}

TEST_CASE("caption corpus covers disc and background words") {
  const auto corpus = generate_caption_corpus(200, 4);
  REQUIRE(corpus.size() == 200);
  std::set<int> discs, backgrounds;
  for (const auto& c : corpus) {
    REQUIRE(c.prompt.size() == 2);
    discs.insert(c.prompt[0]);
    backgrounds.insert(c.prompt[1]);
    CHECK(c.image.boxes.size() == 1);
  }
  CHECK(discs.size() == toy_words::kDiscColors);
  CHECK(backgrounds.size() == toy_words::kBackgroundColors);
  CHECK(toy_source_prompt()[0] == toy_target_prompt()[0]);
}

TEST_CASE("PNG round trip of quantized images") {
  const auto dir = scratch("png");
  const Tensor img = quantize8(random_image(8, 9));
  write_png(dir / "x.png", img);
  const Tensor back = read_png(dir / "x.png");
  CHECK(back.shape == img.shape);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back[i] - img[i]) < 1e-12);
}
