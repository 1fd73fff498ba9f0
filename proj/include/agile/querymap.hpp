#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "agile/tensor.hpp"

namespace agile {

// Axis-aligned box in image pixel coordinates (COCO convention).
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double width = 0.0;
  double height = 0.0;
  int class_id = 0;

  double center_x() const { return x_min + width / 2.0; }
  double center_y() const { return y_min + height / 2.0; }
  bool contains(double x, double y) const {
    return x >= x_min && x <= x_min + width && y >= y_min && y <= y_min + height;
  }
  bool operator==(const BoundingBox&) const = default;
};

struct ImageSize {
  int height = 0;
  int width = 0;
};

// Row-major 2-D grid of reals.
struct MapGrid {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  MapGrid() = default;
  MapGrid(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}
  MapGrid(int h, int w, std::vector<double> v);

  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
  double max() const;
  double min() const;
};

// Target attention pattern built from box labels. Values in [0, 1].
struct QueryAttentionMap {
  MapGrid grid;
  // One entry per box skipped during rasterization.
  std::vector<std::string> warnings;

  bool all_zero() const;
};

// Image with its detection labels. `image` is {3, H, W} in [0, 1].
struct LabeledImage {
  std::string identifier;
  int image_id = 0;
  Tensor image;
  std::vector<BoundingBox> boxes;

  ImageSize size() const { return {image.dim(1), image.dim(2)}; }
};

double gaussian_marker(double x, double y, double center_x, double center_y, double sigma_x, double sigma_y);

QueryAttentionMap build_query_map(const std::vector<BoundingBox>& boxes, ImageSize image_size, ImageSize resolution,
                                  double sigma_scale = 0.5);

// Bilinear resize with half-pixel centers; output clamped to [0, 1].
QueryAttentionMap resample_map(const QueryAttentionMap& map, ImageSize target);
MapGrid resample_grid(const MapGrid& grid, ImageSize target);

// Portable array file: "H W dtype=f32 order=row-major\n" + little-endian float32 payload.
void write_array(const std::filesystem::path& path, const MapGrid& grid);
MapGrid read_array(const std::filesystem::path& path);

}  // namespace agile
