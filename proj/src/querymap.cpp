#include "agile/querymap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "agile/resample.hpp"

namespace agile {

MapGrid::MapGrid(int h, int w, std::vector<double> v) : height(h), width(w), values(std::move(v)) {
  if (values.size() != static_cast<std::size_t>(h) * w) throw ShapeError("MapGrid: value count mismatch");
}

double MapGrid::max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
double MapGrid::min() const { return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end()); }

bool QueryAttentionMap::all_zero() const {
  return std::all_of(grid.values.begin(), grid.values.end(), [](double v) { return v == 0.0; });
}

double gaussian_marker(double x, double y, double center_x, double center_y, double sigma_x, double sigma_y) {
  if (!(sigma_x > 0.0) || !(sigma_y > 0.0)) {
    throw DomainError("gaussian_marker: sigma must be positive");
  }
  const double dx = x - center_x;
  const double dy = y - center_y;
  return std::exp(-(dx * dx) / (2.0 * sigma_x * sigma_x) - (dy * dy) / (2.0 * sigma_y * sigma_y));
}

QueryAttentionMap build_query_map(const std::vector<BoundingBox>& boxes, ImageSize image_size, ImageSize resolution,
                                  double sigma_scale) {
  if (!(sigma_scale > 0.0)) throw ConfigError("build_query_map: sigma_scale must be positive");
  if (resolution.height <= 0 || resolution.width <= 0 || image_size.height <= 0 || image_size.width <= 0) {
    throw ConfigError("build_query_map: resolution must be positive");
  }
  QueryAttentionMap out{MapGrid(resolution.height, resolution.width, 0.0), {}};
  const double sx = static_cast<double>(resolution.width) / image_size.width;
  const double sy = static_cast<double>(resolution.height) / image_size.height;

  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    // Clamp to the image, then map into grid units.
    const double x0 = std::clamp(b.x_min, 0.0, static_cast<double>(image_size.width));
    const double y0 = std::clamp(b.y_min, 0.0, static_cast<double>(image_size.height));
    const double x1 = std::clamp(b.x_min + b.width, 0.0, static_cast<double>(image_size.width));
    const double y1 = std::clamp(b.y_min + b.height, 0.0, static_cast<double>(image_size.height));
    const double w = (x1 - x0) * sx;
    const double h = (y1 - y0) * sy;
    if (!(w > 0.0) || !(h > 0.0)) {
      out.warnings.push_back("box " + std::to_string(i) + " has zero area after mapping; skipped");
      continue;
    }
    // Pixel centers sit at integer grid coordinates; the marker center snaps to the nearest one.
    const double u = (x0 + x1) / 2.0 * sx - 0.5;
    const double v = (y0 + y1) / 2.0 * sy - 0.5;
    const int cx = std::clamp(static_cast<int>(std::lround(u)), 0, resolution.width - 1);
    const int cy = std::clamp(static_cast<int>(std::lround(v)), 0, resolution.height - 1);
    const double sigma_x = sigma_scale * w / 2.0;
    const double sigma_y = sigma_scale * h / 2.0;
    for (int y = 0; y < resolution.height; ++y) {
      for (int x = 0; x < resolution.width; ++x) {
        double& cell = out.grid.at(y, x);
        cell = std::max(cell, gaussian_marker(x, y, cx, cy, sigma_x, sigma_y));
      }
    }
  }
  return out;
}

MapGrid resample_grid(const MapGrid& grid, ImageSize target) {
  if (target.height <= 0 || target.width <= 0) throw ConfigError("resample_map: target resolution must be positive");
  if (grid.height <= 0 || grid.width <= 0) throw ShapeError("resample_map: empty source map");
  const auto ys = bilinear_taps(grid.height, target.height);
  const auto xs = bilinear_taps(grid.width, target.width);
  MapGrid out(target.height, target.width);
  for (int y = 0; y < target.height; ++y) {
    for (int x = 0; x < target.width; ++x) {
      const auto& ty = ys[static_cast<std::size_t>(y)];
      const auto& tx = xs[static_cast<std::size_t>(x)];
      out.at(y, x) = (1 - ty.frac) * ((1 - tx.frac) * grid.at(ty.lo, tx.lo) + tx.frac * grid.at(ty.lo, tx.hi)) +
                     ty.frac * ((1 - tx.frac) * grid.at(ty.hi, tx.lo) + tx.frac * grid.at(ty.hi, tx.hi));
    }
  }
  return out;
}

QueryAttentionMap resample_map(const QueryAttentionMap& map, ImageSize target) {
  QueryAttentionMap out{resample_grid(map.grid, target), map.warnings};
  for (auto& v : out.grid.values) v = std::clamp(v, 0.0, 1.0);
  return out;
}

void write_array(const std::filesystem::path& path, const MapGrid& grid) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << grid.height << ' ' << grid.width << " dtype=f32 order=row-major\n";
  for (double v : grid.values) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                          static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!os) throw Error("write failed: " + path.string());
}

MapGrid read_array(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError("cannot open array file " + path.string());
  std::string header;
  std::getline(is, header);
  std::istringstream hs(header);
  int h = 0, w = 0;
  std::string dtype, order;
  hs >> h >> w >> dtype >> order;
  if (!hs || h <= 0 || w <= 0 || dtype != "dtype=f32" || order != "order=row-major") {
    throw Error("malformed array header in " + path.string() + ": '" + header + "'");
  }
  MapGrid grid(h, w);
  for (auto& v : grid.values) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw Error("truncated array payload in " + path.string());
    const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    v = std::bit_cast<float>(bits);
  }
  return grid;
}

}  // namespace agile
