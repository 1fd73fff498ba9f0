#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "agile/tensor.hpp"

namespace agile {

// 8-bit RGB PNG <-> {3, H, W} tensor in [0, 1].
void write_png(const std::filesystem::path& path, const Tensor& image);
Tensor read_png(const std::filesystem::path& path);

// Interleaved 8-bit RGB buffer of width * height * 3 bytes.
void write_png_rgb8(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb);

// Rounds every pixel to the nearest 8-bit level, as a PNG round trip would.
Tensor quantize8(const Tensor& image);

}  // namespace agile
