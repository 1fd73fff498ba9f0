#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "agile/querymap.hpp"

namespace agile {

struct DomainDataset {
  std::string name;
  std::vector<LabeledImage> images;
  // Target-domain sets used for training carry labeled = false.
  bool labeled = true;
};

// Itemized problems found while loading annotations.
struct DatasetError : Error {
  std::vector<std::string> problems;
  explicit DatasetError(std::vector<std::string> p);
};

// COCO detection schema: images[{id, file_name, width, height}],
// annotations[{id, image_id, bbox: [x, y, w, h], category_id}].
DomainDataset load_coco(const std::filesystem::path& annotation_path, const std::filesystem::path& image_dir,
                        const std::string& name = "", bool labeled = true);
// Writes PNGs into image_dir and the annotation file; image ids are 1-based in order.
void write_coco(const DomainDataset& ds, const std::filesystem::path& annotation_path,
                const std::filesystem::path& image_dir);

struct AugmentParams {
  bool flip = false;
  double crop_scale = 1.0;  // fraction of the image area kept
  double crop_x = 0.0;      // crop offset as a fraction of the free margin
  double crop_y = 0.0;
  double brightness = 1.0;
  double contrast = 1.0;
};

AugmentParams sample_augment(std::uint64_t seed);
// Output keeps the input dimensions and is clamped to [0, 1].
Tensor apply_augment(const Tensor& image, const AugmentParams& params);
Tensor augment(const Tensor& image, std::uint64_t seed);

struct ToyFixture {
  DomainDataset source;  // gray discs on white, exact boxes
  DomainDataset target;  // colored discs on dark background, labels withheld
};

// In-memory fixture; pixels are already quantized to 8 bits.
ToyFixture generate_toy_fixture(int n_images, std::uint64_t seed, int image_size = 16);
// Same, written as <out_dir>/{source,target}/{annotations.json,images/}.
ToyFixture make_toy_fixture(const std::filesystem::path& out_dir, int n_images, std::uint64_t seed,
                            int image_size = 16);

LabeledImage render_source_image(const BoundingBox& disc_box, double background, double disc_level, int image_size);

// Toy vocabulary. Ids 1..12 name a disc color, 16..23 a background color.
namespace toy_words {
inline constexpr int kGrayDisc = 1;
inline constexpr int kOrangeDisc = 2;
inline constexpr int kFirstDisc = 1;
inline constexpr int kDiscColors = 12;
inline constexpr int kWhiteBackground = 16;
inline constexpr int kDarkBackground = 17;
inline constexpr int kFirstBackground = 16;
inline constexpr int kBackgroundColors = 8;
// Object-token word of both domain prompts: the target domain's name for the disc.
inline constexpr int kObjectWord = kOrangeDisc;
}  // namespace toy_words

// Prompts for the fixture domains: {object word, background word}.
std::vector<int> toy_source_prompt();
std::vector<int> toy_target_prompt();

struct CaptionedImage {
  LabeledImage image;
  std::vector<int> prompt;
};

// Discs of every palette color on every background, each captioned with its
// {disc word, background word}. Stands in for the captioned data a pretrained
// text-to-image model has seen.
std::vector<CaptionedImage> generate_caption_corpus(int n_images, std::uint64_t seed, int image_size = 16);

}  // namespace agile
