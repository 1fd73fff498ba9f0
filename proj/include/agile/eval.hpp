#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "agile/attention.hpp"
#include "agile/querymap.hpp"
#include "agile/tensor.hpp"

namespace agile {

using FeatureVector = std::vector<double>;
using FeatureSet = std::vector<FeatureVector>;

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int dim() const = 0;
  virtual FeatureVector embed(const Tensor& image) const = 0;
};

// Pools {3, H, W} to {3, pool, pool} bilinearly and applies a fixed Gaussian
// projection to `dim` features.
class PooledProjectionExtractor final : public FeatureExtractor {
 public:
  explicit PooledProjectionExtractor(int dim = 64, int pool = 8, std::uint64_t seed = 0x5eedULL);
  int dim() const override { return dim_; }
  FeatureVector embed(const Tensor& image) const override;

 private:
  int dim_, pool_;
  std::vector<double> projection_;  // {dim, 3 * pool * pool}
};

FeatureSet embed_all(const FeatureExtractor& extractor, const std::vector<Tensor>& images);

// Frechet distance between Gaussian fits of two feature sets. Each set needs at
// least d + 1 samples.
double compute_fid(const FeatureSet& a, const FeatureSet& b);

struct CoverageResult {
  double fraction = 0.0;
  bool degenerate = false;  // map had no mass
};

// Share of the map's mass on cells whose centers fall inside any box. The map
// may be coarser than the image; cells are mapped onto image coordinates.
CoverageResult attention_coverage(const MapGrid& map, const std::vector<BoundingBox>& boxes, ImageSize image_size);
CoverageResult attention_coverage(const AttentionRecord& record, const std::vector<int>& layers, int timestep,
                                  const std::vector<BoundingBox>& boxes, ImageSize image_size);

// Mean coverage of the token-0 maps recorded at steps in [first, last), over
// every recorded layer; nullopt when no map falls in the window.
std::optional<double> window_coverage(const std::vector<GuidanceHook::UsedMap>& maps, int first, int last,
                                      const std::vector<BoundingBox>& boxes, ImageSize image_size);

// Pixel-statistics domain classifier for the toy fixture: dark, chromatic
// images score high. >= 0.5 means target domain.
double domain_score(const Tensor& image);

// Centroid (x, y) in pixel coordinates of the largest 4-connected region whose
// 3x3-blurred color differs from the per-channel median by more than
// `threshold` (RGB distance). Regions under 3 pixels count as no foreground.
std::optional<std::pair<double, double>> foreground_centroid(const Tensor& image, double threshold = 0.25);

struct PlotInput {
  std::optional<Tensor> source_image;
  std::optional<MapGrid> query_map;
  std::vector<MapGrid> maps;
  std::vector<BoundingBox> boxes;  // image coordinates
  ImageSize image_size{16, 16};
};

// One row of panels: source image, query map, then each map; boxes outlined on
// every panel. Returns the panel count.
int plot_maps(const PlotInput& input, const std::filesystem::path& out_path, int panel_px = 64);

struct EvalReport {
  double fid = 0.0;
  double coverage_mean = 0.0;
  double domain_score_rate = 0.0;
  std::string config_hash;

  std::string to_json() const;
};

}  // namespace agile
