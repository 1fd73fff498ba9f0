#include "agile/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "agile/image_io.hpp"

namespace agile {

namespace {

std::string join_problems(const std::vector<std::string>& p) {
  std::ostringstream os;
  os << p.size() << " dataset problem(s):";
  for (const auto& s : p) os << "\n  - " << s;
  return os.str();
}

void check_unit_range(const Tensor& image, const char* what) {
  for (double v : image.data) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError(std::string(what) + ": pixel outside [0,1]");
  }
}

double sample_bilinear(const Tensor& img, int c, double y, double x) {
  const int h = img.dim(1), w = img.dim(2);
  y = std::clamp(y, 0.0, h - 1.0);
  x = std::clamp(x, 0.0, w - 1.0);
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0, fx = x - x0;
  return (1 - fy) * ((1 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1)) +
         fy * ((1 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1));
}

}  // namespace

DatasetError::DatasetError(std::vector<std::string> p) : Error(join_problems(p)), problems(std::move(p)) {}

DomainDataset load_coco(const std::filesystem::path& annotation_path, const std::filesystem::path& image_dir,
                        const std::string& name, bool labeled) {
  std::ifstream is(annotation_path);
  if (!is) throw MissingArtifactError("annotation file not found: " + annotation_path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError({"malformed JSON in " + annotation_path.string() + ": " + e.what()});
  }

  std::vector<std::string> problems;
  DomainDataset ds;
  ds.name = name.empty() ? annotation_path.parent_path().filename().string() : name;
  ds.labeled = labeled;
  std::map<int, std::size_t> by_id;
  try {
    for (const auto& im : j.at("images")) {
      LabeledImage li;
      li.image_id = im.at("id").get<int>();
      li.identifier = im.at("file_name").get<std::string>();
      const int w = im.at("width").get<int>();
      const int h = im.at("height").get<int>();
      const auto file = image_dir / li.identifier;
      if (!std::filesystem::exists(file)) {
        problems.push_back("image " + std::to_string(li.image_id) + ": missing file " + file.string());
        continue;
      }
      li.image = read_png(file);
      if (li.image.dim(1) != h || li.image.dim(2) != w) {
        problems.push_back("image " + std::to_string(li.image_id) + ": declared " + std::to_string(w) + "x" +
                           std::to_string(h) + " but file is " + std::to_string(li.image.dim(2)) + "x" +
                           std::to_string(li.image.dim(1)));
        continue;
      }
      by_id[li.image_id] = ds.images.size();
      ds.images.push_back(std::move(li));
    }
    for (const auto& an : j.value("annotations", nlohmann::json::array())) {
      const int image_id = an.at("image_id").get<int>();
      const int ann_id = an.value("id", -1);
      auto it = by_id.find(image_id);
      if (it == by_id.end()) {
        problems.push_back("annotation " + std::to_string(ann_id) + " references unknown image_id " +
                           std::to_string(image_id));
        continue;
      }
      const auto bbox = an.at("bbox").get<std::vector<double>>();
      if (bbox.size() != 4) {
        problems.push_back("annotation " + std::to_string(ann_id) + ": bbox must have 4 numbers");
        continue;
      }
      BoundingBox b{bbox[0], bbox[1], bbox[2], bbox[3], an.value("category_id", 0)};
      auto& li = ds.images[it->second];
      const ImageSize sz = li.size();
      if (!(b.width > 0.0) || !(b.height > 0.0) || b.x_min < 0.0 || b.y_min < 0.0 ||
          b.x_min + b.width > sz.width || b.y_min + b.height > sz.height) {
        problems.push_back("annotation " + std::to_string(ann_id) + ": bbox outside image " +
                           std::to_string(image_id));
        continue;
      }
      li.boxes.push_back(b);
    }
  } catch (const nlohmann::json::exception& e) {
    problems.push_back(std::string("schema violation: ") + e.what());
  }
  if (!problems.empty()) throw DatasetError(std::move(problems));
  return ds;
}

void write_coco(const DomainDataset& ds, const std::filesystem::path& annotation_path,
                const std::filesystem::path& image_dir) {
  std::filesystem::create_directories(image_dir);
  if (annotation_path.has_parent_path()) std::filesystem::create_directories(annotation_path.parent_path());
  nlohmann::json images = nlohmann::json::array();
  nlohmann::json annotations = nlohmann::json::array();
  int ann_id = 1;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& li = ds.images[i];
    const int id = li.image_id > 0 ? li.image_id : static_cast<int>(i) + 1;
    write_png(image_dir / li.identifier, li.image);
    images.push_back({{"id", id}, {"file_name", li.identifier}, {"width", li.image.dim(2)}, {"height", li.image.dim(1)}});
    for (const auto& b : li.boxes) {
      annotations.push_back({{"id", ann_id++},
                             {"image_id", id},
                             {"bbox", {b.x_min, b.y_min, b.width, b.height}},
                             {"area", b.width * b.height},
                             {"iscrowd", 0},
                             {"category_id", b.class_id}});
    }
  }
  nlohmann::json j = {{"images", images},
                      {"annotations", annotations},
                      {"categories", {{{"id", 0}, {"name", "object"}}}}};
  std::ofstream os(annotation_path);
  if (!os) throw Error("cannot write " + annotation_path.string());
  os << j.dump(2) << '\n';
}

AugmentParams sample_augment(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentParams p;
  p.flip = unit(rng) < 0.5;
  p.crop_scale = 0.8 + 0.2 * unit(rng);
  p.crop_x = unit(rng);
  p.crop_y = unit(rng);
  p.brightness = 0.8 + 0.4 * unit(rng);
  p.contrast = 0.8 + 0.4 * unit(rng);
  return p;
}

Tensor apply_augment(const Tensor& image, const AugmentParams& p) {
  if (image.rank() != 3) throw ShapeError("augment: expected {C,H,W}");
  check_unit_range(image, "augment");
  const int ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out = image;

  if (p.flip) {
    for (int c = 0; c < ch; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(c, y, x) = image.at(c, y, w - 1 - x);
  }
  if (p.crop_scale < 1.0) {
    // Square crop keeping crop_scale of the area, resized back to h x w.
    const double side = std::sqrt(p.crop_scale);
    const double ch_px = side * h, cw_px = side * w;
    const double oy = p.crop_y * (h - ch_px), ox = p.crop_x * (w - cw_px);
    const Tensor src = out;
    for (int c = 0; c < ch; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double sy = oy + (y + 0.5) * ch_px / h - 0.5;
          const double sx = ox + (x + 0.5) * cw_px / w - 0.5;
          out.at(c, y, x) = sample_bilinear(src, c, sy, sx);
        }
  }
  if (p.brightness != 1.0) {
    for (auto& v : out.data) v *= p.brightness;
  }
  if (p.contrast != 1.0) {
    double mean = 0.0;
    for (double v : out.data) mean += v;
    mean /= static_cast<double>(out.size());
    for (auto& v : out.data) v = mean + (v - mean) * p.contrast;
  }
  for (auto& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Tensor augment(const Tensor& image, std::uint64_t seed) { return apply_augment(image, sample_augment(seed)); }

namespace {

// Disc of radius `r` centered in `box`; pixel centers at (x + 0.5, y + 0.5).
void paint_disc(Tensor& img, const BoundingBox& box, const double color[3]) {
  const double cx = box.center_x(), cy = box.center_y(), r = box.width / 2.0;
  for (int y = 0; y < img.dim(1); ++y)
    for (int x = 0; x < img.dim(2); ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= r * r) {
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = color[c];
      }
    }
}

BoundingBox random_disc_box(std::mt19937_64& rng, int size) {
  std::uniform_real_distribution<double> radius(2.5, 4.0);
  const double r = radius(rng);
  std::uniform_real_distribution<double> center(r + 0.5, size - r - 0.5);
  const double cx = center(rng), cy = center(rng);
  return BoundingBox{cx - r, cy - r, 2 * r, 2 * r, 0};
}

std::string file_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d.png", prefix, i);
  return buf;
}

}  // namespace

LabeledImage render_source_image(const BoundingBox& disc_box, double background, double disc_level, int image_size) {
  LabeledImage li;
  li.image = Tensor({3, image_size, image_size}, background);
  const double color[3] = {disc_level, disc_level, disc_level};
  paint_disc(li.image, disc_box, color);
  li.image = quantize8(li.image);
  li.boxes = {disc_box};
  return li;
}

ToyFixture generate_toy_fixture(int n_images, std::uint64_t seed, int image_size) {
  if (n_images < 5) throw ConfigError("make_toy_fixture: need at least 5 images");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ToyFixture fx;
  fx.source.name = "toy_source";
  fx.source.labeled = true;
  fx.target.name = "toy_target";
  fx.target.labeled = false;
  for (int i = 0; i < n_images; ++i) {
    const BoundingBox sbox = random_disc_box(rng, image_size);
    LabeledImage s = render_source_image(sbox, 0.9 + 0.1 * unit(rng), 0.45 + 0.1 * unit(rng), image_size);
    s.identifier = file_name("source", i);
    s.image_id = i + 1;
    fx.source.images.push_back(std::move(s));

    const BoundingBox tbox = random_disc_box(rng, image_size);
    LabeledImage t;
    t.image = Tensor({3, image_size, image_size});
    const double bg[3] = {0.05 + 0.1 * unit(rng), 0.05 + 0.1 * unit(rng), 0.1 + 0.1 * unit(rng)};
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < image_size * image_size; ++k) t.image[static_cast<std::size_t>(c) * image_size * image_size + k] = bg[c];
    const double disc[3] = {0.8 + 0.15 * unit(rng), 0.35 + 0.2 * unit(rng), 0.05 + 0.1 * unit(rng)};
    paint_disc(t.image, tbox, disc);
    t.image = quantize8(t.image);
    t.identifier = file_name("target", i);
    t.image_id = i + 1;
    fx.target.images.push_back(std::move(t));
  }
  return fx;
}

std::vector<int> toy_source_prompt() { return {toy_words::kObjectWord, toy_words::kWhiteBackground}; }
std::vector<int> toy_target_prompt() { return {toy_words::kObjectWord, toy_words::kDarkBackground}; }

namespace {

constexpr double kDiscPalette[toy_words::kDiscColors][3] = {
    {0.5, 0.5, 0.5},    {0.875, 0.45, 0.1}, {0.85, 0.1, 0.1},   {0.1, 0.7, 0.2},
    {0.15, 0.25, 0.85}, {0.9, 0.85, 0.1},   {0.55, 0.15, 0.7},  {0.97, 0.97, 0.97},
    {0.05, 0.05, 0.05}, {0.1, 0.8, 0.85},   {0.45, 0.28, 0.1},  {0.95, 0.55, 0.7}};
constexpr double kBackgroundPalette[toy_words::kBackgroundColors][3] = {
    {0.95, 0.95, 0.95}, {0.1, 0.1, 0.15}, {0.3, 0.55, 0.2},  {0.55, 0.75, 0.95},
    {0.6, 0.6, 0.6},    {0.02, 0.02, 0.02}, {0.85, 0.75, 0.55}, {0.1, 0.12, 0.35}};

double color_distance(const double a[3], const double b[3]) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(s);
}

}  // namespace

std::vector<CaptionedImage> generate_caption_corpus(int n_images, std::uint64_t seed, int image_size) {
  if (n_images < 1) throw ConfigError("caption corpus: need at least one image");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> disc_word(0, toy_words::kDiscColors - 1);
  std::uniform_int_distribution<int> bg_word(0, toy_words::kBackgroundColors - 1);
  std::vector<CaptionedImage> out;
  out.reserve(static_cast<std::size_t>(n_images));
  while (static_cast<int>(out.size()) < n_images) {
    const int d = disc_word(rng), b = bg_word(rng);
    if (color_distance(kDiscPalette[d], kBackgroundPalette[b]) < 0.3) continue;
    double bg[3], disc[3];
    for (int c = 0; c < 3; ++c) {
      bg[c] = std::clamp(kBackgroundPalette[b][c] + 0.1 * (unit(rng) - 0.5), 0.0, 1.0);
      disc[c] = std::clamp(kDiscPalette[d][c] + 0.1 * (unit(rng) - 0.5), 0.0, 1.0);
    }
    const BoundingBox box = random_disc_box(rng, image_size);
    CaptionedImage ci;
    ci.image.image = Tensor({3, image_size, image_size});
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < image_size * image_size; ++k) ci.image.image[static_cast<std::size_t>(c) * image_size * image_size + k] = bg[c];
    paint_disc(ci.image.image, box, disc);
    ci.image.image = quantize8(ci.image.image);
    ci.image.boxes = {box};
    ci.image.image_id = static_cast<int>(out.size()) + 1;
    ci.image.identifier = file_name("caption", static_cast<int>(out.size()));
    ci.prompt = {toy_words::kFirstDisc + d, toy_words::kFirstBackground + b};
    out.push_back(std::move(ci));
  }
  return out;
}

ToyFixture make_toy_fixture(const std::filesystem::path& out_dir, int n_images, std::uint64_t seed, int image_size) {
  ToyFixture fx = generate_toy_fixture(n_images, seed, image_size);
  write_coco(fx.source, out_dir / "source" / "annotations.json", out_dir / "source" / "images");
  write_coco(fx.target, out_dir / "target" / "annotations.json", out_dir / "target" / "images");
  return fx;
}

}  // namespace agile
