#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace agile {

// One output coordinate of a 1-D bilinear resize: blend of source samples lo and hi.
struct BilinearTap {
  int lo = 0;
  int hi = 0;
  double frac = 0.0;
};

// Half-pixel centers (corners not aligned), source coordinate clamped to the edge.
inline std::vector<BilinearTap> bilinear_taps(int in_size, int out_size) {
  std::vector<BilinearTap> taps(static_cast<std::size_t>(out_size));
  const double ratio = static_cast<double>(in_size) / out_size;
  for (int i = 0; i < out_size; ++i) {
    double src = (i + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    const int lo = static_cast<int>(std::floor(src));
    taps[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, in_size - 1), src - lo};
  }
  return taps;
}

}  // namespace agile
