#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "pal/tensor.hpp"

namespace pal::prior {

/// Pixel coordinates, origin at the centre of the top-left pixel.
struct Landmark {
  double x = 0.0;
  double y = 0.0;
};

struct LandmarkSet {
  std::vector<Landmark> points;
  std::size_t clamped = 0;  // points pulled back onto the canvas by the last transform
};

/// 2-D map stored row-major.
struct Heatmap {
  std::size_t height = 0;
  std::size_t width = 0;
  Buffer values;
  bool standardized = false;

  double at(std::size_t row, std::size_t col) const { return values[row * width + col]; }
};

/// Sum of unit Diracs at the nearest pixel of each landmark.
Heatmap rasterize_landmarks(const LandmarkSet& landmarks, std::size_t height, std::size_t width);

/// Closed-form Gaussian-filtered landmark map:
///   sum_k 1/sqrt(2 pi sigma^2) * exp(-((i - y_k)^2 + (j - x_k)^2) / (2 sigma^2))
/// with i the row and j the column. The 1-D normaliser is intentional.
Heatmap gaussian_heatmap(const LandmarkSet& landmarks, std::size_t height, std::size_t width,
                         double sigma = 3.0);

/// Zero mean, unit population variance. Throws NumericError("degenerate prior") on constant maps.
Heatmap standardize_map(const Heatmap& map);

/// Block-average pooling to (height, width) by integer factors, then re-standardized.
Heatmap match_resolution(const Heatmap& map, std::size_t height, std::size_t width);

/// Rotation by `degrees` about the image centre, then x -> W-1-x if `flip`.
/// Points that leave the canvas are clamped and counted in `clamped`.
LandmarkSet transform_landmarks(const LandmarkSet& landmarks, double degrees, bool flip,
                                std::size_t height, std::size_t width);

/// Input-resolution Gaussian prior, pooled to the tap resolution and standardized.
Heatmap build_prior(const LandmarkSet& landmarks, std::size_t image_height, std::size_t image_width,
                    std::size_t tap_height, std::size_t tap_width, double sigma);

/// Stacks maps of equal size into an N x 1 x H x W tensor.
Tensor stack(const std::vector<Heatmap>& maps);

/// Text format: one "x y" pair per line.
LandmarkSet read_landmarks(const std::filesystem::path& path,
                           std::optional<std::size_t> expected_count = std::nullopt);
void write_landmarks(const std::filesystem::path& path, const LandmarkSet& landmarks);

}  // namespace pal::prior
