#pragma once

#include <cstddef>
#include <filesystem>
#include <span>

#include "pal/tensor.hpp"

namespace pal::data {

/// Grayscale image with values in [0, 1], row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  Buffer pixels;

  double at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
};

/// Binary (P5) 8-bit PGM, scaled to [0, 1]. Comments in the header are skipped.
Image read_pgm(const std::filesystem::path& path);
/// Quantizes round(v * 255) after clipping to [0, 1].
void write_pgm(const std::filesystem::path& path, const Image& image);
/// Min-max normalized export; a constant map becomes uniform mid-gray (128).
void write_pgm_normalized(const std::filesystem::path& path, std::size_t height, std::size_t width,
                          std::span<const double> values);

}  // namespace pal::data
