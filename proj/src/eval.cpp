#include "agile/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "agile/image_io.hpp"

namespace agile {

PooledProjectionExtractor::PooledProjectionExtractor(int dim, int pool, std::uint64_t seed) : dim_(dim), pool_(pool) {
  if (dim < 1 || pool < 1) throw ConfigError("feature extractor: dim and pool must be >= 1");
  const int in = 3 * pool * pool;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  projection_.resize(static_cast<std::size_t>(dim) * in);
  for (auto& w : projection_) w = gauss(rng);
}

FeatureVector PooledProjectionExtractor::embed(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("feature extractor: expected {3, H, W}");
  const int h = image.dim(1), w = image.dim(2), plane = h * w;
  std::vector<double> pooled;
  pooled.reserve(static_cast<std::size_t>(3) * pool_ * pool_);
  for (int c = 0; c < 3; ++c) {
    MapGrid g(h, w, std::vector<double>(image.data.begin() + c * plane, image.data.begin() + (c + 1) * plane));
    const MapGrid p = resample_grid(g, {pool_, pool_});
    pooled.insert(pooled.end(), p.values.begin(), p.values.end());
  }
  FeatureVector f(static_cast<std::size_t>(dim_), 0.0);
  const std::size_t in = pooled.size();
  for (int k = 0; k < dim_; ++k)
    for (std::size_t i = 0; i < in; ++i) f[static_cast<std::size_t>(k)] += projection_[k * in + i] * pooled[i];
  return f;
}

FeatureSet embed_all(const FeatureExtractor& extractor, const std::vector<Tensor>& images) {
  FeatureSet out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back(extractor.embed(im));
  return out;
}

namespace {

Eigen::MatrixXd to_matrix(const FeatureSet& s, const char* which) {
  if (s.empty()) throw ConfigError(std::string("fid: feature set ") + which + " is empty");
  const auto d = static_cast<Eigen::Index>(s[0].size());
  if (static_cast<Eigen::Index>(s.size()) < d + 1) {
    throw ConfigError(std::string("fid: feature set ") + which + " has " + std::to_string(s.size()) +
                      " samples; at least " + std::to_string(d + 1) + " are needed");
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(s.size()), d);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (static_cast<Eigen::Index>(s[i].size()) != d) throw ShapeError("fid: inconsistent feature dimension");
    for (Eigen::Index j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), j) = s[i][static_cast<std::size_t>(j)];
  }
  return m;
}

void gaussian_fit(const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  mu = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
  cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
  cov.diagonal().array() += 1e-6;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw NumericError("fid: eigendecomposition failed");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double compute_fid(const FeatureSet& a, const FeatureSet& b) {
  const Eigen::MatrixXd xa = to_matrix(a, "a"), xb = to_matrix(b, "b");
  if (xa.cols() != xb.cols()) throw ShapeError("fid: feature dimensions differ");
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  gaussian_fit(xa, mu_a, cov_a);
  gaussian_fit(xb, mu_b, cov_b);
  // Tr((Sa Sb)^1/2) = Tr((Sa^1/2 Sb Sa^1/2)^1/2), whose argument is symmetric PSD.
  const Eigen::MatrixXd ra = psd_sqrt(cov_a);
  const Eigen::MatrixXd cross = psd_sqrt(ra * cov_b * ra);
  const double fid = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
  if (!std::isfinite(fid)) throw NumericError("fid: non-finite result");
  return std::max(0.0, fid);
}

CoverageResult attention_coverage(const MapGrid& map, const std::vector<BoundingBox>& boxes, ImageSize image_size) {
  double total = 0.0, inside = 0.0;
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      const double v = map.at(y, x);
      if (v < 0.0) throw DomainError("attention_coverage: negative map value");
      total += v;
      const double px = (x + 0.5) * image_size.width / map.width;
      const double py = (y + 0.5) * image_size.height / map.height;
      if (std::any_of(boxes.begin(), boxes.end(), [&](const BoundingBox& b) { return b.contains(px, py); })) inside += v;
    }
  if (!(total > 0.0)) return {0.0, true};
  return {std::clamp(inside / total, 0.0, 1.0), false};
}

CoverageResult attention_coverage(const AttentionRecord& record, const std::vector<int>& layers, int timestep,
                                  const std::vector<BoundingBox>& boxes, ImageSize image_size) {
  const auto agg = aggregate_token_map(record, TextEmbedding::kObjectToken, layers, timestep);
  return attention_coverage(agg.mean, boxes, image_size);
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

std::optional<double> window_coverage(const std::vector<GuidanceHook::UsedMap>& maps, int first, int last,
                                      const std::vector<BoundingBox>& boxes, ImageSize image_size) {
  double sum = 0.0;
  int n = 0;
  for (const auto& m : maps) {
    if (m.step < first || m.step >= last) continue;
    sum += attention_coverage(m.object_map, boxes, image_size).fraction;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

double domain_score(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("domain_score: expected {3, H, W}");
  const std::size_t plane = static_cast<std::size_t>(image.dim(1)) * image.dim(2);
  double lum = 0.0, chroma = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    const double r = image[i], g = image[plane + i], b = image[2 * plane + i];
    lum += 0.299 * r + 0.587 * g + 0.114 * b;
    chroma += std::max({r, g, b}) - std::min({r, g, b});
  }
  lum /= static_cast<double>(plane);
  chroma /= static_cast<double>(plane);
  return 0.7 * sigmoid((0.5 - lum) / 0.08) + 0.3 * sigmoid((chroma - 0.05) / 0.02);
}

std::optional<std::pair<double, double>> foreground_centroid(const Tensor& image, double threshold) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("foreground_centroid: expected {3, H, W}");
  const int h = image.dim(1), w = image.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  // 3x3 box blur (edge-clamped) so isolated speckle does not register.
  Tensor blurred(image.shape);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            s += image.at(c, std::clamp(y + dy, 0, h - 1), std::clamp(x + dx, 0, w - 1));
        blurred.at(c, y, x) = s / 9.0;
      }
  double median[3];
  for (int c = 0; c < 3; ++c) {
    std::vector<double> v(blurred.data.begin() + c * plane, blurred.data.begin() + (c + 1) * plane);
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    median[c] = v[v.size() / 2];
  }
  std::vector<char> fg(plane, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double d2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = blurred.at(c, y, x) - median[c];
        d2 += d * d;
      }
      fg[static_cast<std::size_t>(y) * w + x] = d2 > threshold * threshold;
    }
  // Largest 4-connected component.
  std::vector<int> label(plane, -1);
  std::vector<std::size_t> best;
  for (std::size_t seed = 0; seed < plane; ++seed) {
    if (!fg[seed] || label[seed] >= 0) continue;
    std::vector<std::size_t> comp{seed}, stack{seed};
    label[seed] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const int py = static_cast<int>(p) / w, px = static_cast<int>(p) % w;
      const int ny[4] = {py - 1, py + 1, py, py}, nx[4] = {px, px, px - 1, px + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
        const std::size_t q = static_cast<std::size_t>(ny[k]) * w + nx[k];
        if (fg[q] && label[q] < 0) {
          label[q] = 1;
          comp.push_back(q);
          stack.push_back(q);
        }
      }
    }
    if (comp.size() > best.size()) best = std::move(comp);
  }
  if (best.size() < 3) return std::nullopt;
  double sx = 0.0, sy = 0.0;
  for (std::size_t p : best) {
    sx += static_cast<double>(p % w) + 0.5;
    sy += static_cast<double>(p / w) + 0.5;
  }
  return std::make_pair(sx / best.size(), sy / best.size());
}

namespace {

struct Canvas {
  int width, height;
  std::vector<std::uint8_t> rgb;
  Canvas(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 255) {}
  void set(int x, int y, double r, double g, double b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[i] = static_cast<std::uint8_t>(std::lround(std::clamp(r, 0.0, 1.0) * 255));
    rgb[i + 1] = static_cast<std::uint8_t>(std::lround(std::clamp(g, 0.0, 1.0) * 255));
    rgb[i + 2] = static_cast<std::uint8_t>(std::lround(std::clamp(b, 0.0, 1.0) * 255));
  }
};

void draw_map(Canvas& cv, int x0, int px, const MapGrid& m) {
  const double peak = m.max();
  for (int y = 0; y < px; ++y)
    for (int x = 0; x < px; ++x) {
      const double v = peak > 0.0 ? std::max(0.0, m.at(y * m.height / px, x * m.width / px)) / peak : 0.0;
      cv.set(x0 + x, y, 3 * v, 3 * v - 1, 3 * v - 2);
    }
}

void draw_image(Canvas& cv, int x0, int px, const Tensor& img) {
  const int h = img.dim(1), w = img.dim(2);
  for (int y = 0; y < px; ++y)
    for (int x = 0; x < px; ++x) {
      const int sy = y * h / px, sx = x * w / px;
      cv.set(x0 + x, y, img.at(0, sy, sx), img.at(1, sy, sx), img.at(2, sy, sx));
    }
}

void draw_box(Canvas& cv, int x0, int px, const BoundingBox& b, ImageSize size) {
  const int l = x0 + static_cast<int>(std::floor(b.x_min * px / size.width));
  const int r = x0 + static_cast<int>(std::ceil((b.x_min + b.width) * px / size.width)) - 1;
  const int t = static_cast<int>(std::floor(b.y_min * px / size.height));
  const int bt = static_cast<int>(std::ceil((b.y_min + b.height) * px / size.height)) - 1;
  for (int x = l; x <= r; ++x) {
    cv.set(x, t, 0, 1, 0);
    cv.set(x, bt, 0, 1, 0);
  }
  for (int y = t; y <= bt; ++y) {
    cv.set(l, y, 0, 1, 0);
    cv.set(r, y, 0, 1, 0);
  }
}

}  // namespace

int plot_maps(const PlotInput& input, const std::filesystem::path& out_path, int panel_px) {
  if (panel_px < 1) throw ConfigError("plot_maps: panel size must be >= 1");
  const int panels = (input.source_image ? 1 : 0) + (input.query_map ? 1 : 0) + static_cast<int>(input.maps.size());
  if (panels == 0) throw ConfigError("plot_maps: nothing to plot");
  if (input.source_image && (input.source_image->rank() != 3 || input.source_image->dim(0) != 3)) {
    throw ShapeError("plot_maps: source image must be {3, H, W}");
  }
  constexpr int gap = 2;
  Canvas cv(panels * panel_px + (panels - 1) * gap, panel_px);
  int k = 0;
  auto next = [&] { return (k++) * (panel_px + gap); };
  std::vector<int> origins;
  if (input.source_image) {
    origins.push_back(next());
    draw_image(cv, origins.back(), panel_px, *input.source_image);
  }
  if (input.query_map) {
    origins.push_back(next());
    draw_map(cv, origins.back(), panel_px, *input.query_map);
  }
  for (const auto& m : input.maps) {
    if (m.height < 1 || m.width < 1) throw ShapeError("plot_maps: empty map");
    origins.push_back(next());
    draw_map(cv, origins.back(), panel_px, m);
  }
  for (int x0 : origins)
    for (const auto& b : input.boxes) draw_box(cv, x0, panel_px, b, input.image_size);
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  write_png_rgb8(out_path, cv.width, cv.height, cv.rgb);
  return panels;
}

std::string EvalReport::to_json() const {
  const nlohmann::ordered_json j = {{"fid", fid},
                                    {"coverage_mean", coverage_mean},
                                    {"domain_score_rate", domain_score_rate},
                                    {"config_hash", config_hash}};
  return j.dump(2) + "\n";
}

}  // namespace agile
