#include "pal/prior.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "pal/error.hpp"

namespace pal::prior {

namespace {

double clamp_coord(double v, std::size_t extent, std::size_t& clamped) {
  const double hi = static_cast<double>(extent) - 1.0;
  if (v < 0.0 || v > hi) {
    ++clamped;
    return std::clamp(v, 0.0, hi);
  }
  return v;
}

}  // namespace

Heatmap rasterize_landmarks(const LandmarkSet& landmarks, std::size_t height, std::size_t width) {
  Heatmap map{height, width, Buffer(height * width, 0.0), false};
  for (const Landmark& p : landmarks.points) {
    const auto col = static_cast<std::size_t>(std::clamp(std::lround(p.x), 0L, static_cast<long>(width) - 1));
    const auto row = static_cast<std::size_t>(std::clamp(std::lround(p.y), 0L, static_cast<long>(height) - 1));
    map.values[row * width + col] += 1.0;
  }
  return map;
}

Heatmap gaussian_heatmap(const LandmarkSet& landmarks, std::size_t height, std::size_t width, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian_heatmap: sigma must be positive");
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * sigma * sigma);
  const double denom = 2.0 * sigma * sigma;
  Heatmap map{height, width, Buffer(height * width, 0.0), false};
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j) {
      double acc = 0.0;
      for (const Landmark& p : landmarks.points) {
        const double di = static_cast<double>(i) - p.y;
        const double dj = static_cast<double>(j) - p.x;
        acc += norm * std::exp(-(di * di + dj * dj) / denom);
      }
      map.values[i * width + j] = acc;
    }
  return map;
}

Heatmap standardize_map(const Heatmap& map) {
  const auto n = static_cast<double>(map.values.size());
  if (map.values.empty()) throw NumericError("degenerate prior");
  double mean = 0.0;
  for (double v : map.values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : map.values) var += (v - mean) * (v - mean);
  var /= n;
  const double sd = std::sqrt(var);
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) throw NumericError("degenerate prior");
  Heatmap out{map.height, map.width, Buffer(map.values.size()), true};
  for (std::size_t i = 0; i < map.values.size(); ++i) out.values[i] = (map.values[i] - mean) / sd;
  return out;
}

Heatmap match_resolution(const Heatmap& map, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || height > map.height || width > map.width ||
      map.height % height != 0 || map.width % width != 0)
    throw ConfigError("match_resolution: " + std::to_string(map.height) + "x" + std::to_string(map.width) +
                      " to " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not an integer downscale");
  const std::size_t fy = map.height / height, fx = map.width / width;
  Heatmap pooled{height, width, Buffer(height * width, 0.0), false};
  const double inv = 1.0 / static_cast<double>(fy * fx);
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < fy; ++a)
        for (std::size_t b = 0; b < fx; ++b) acc += map.at(i * fy + a, j * fx + b);
      pooled.values[i * width + j] = acc * inv;
    }
  return standardize_map(pooled);
}

LandmarkSet transform_landmarks(const LandmarkSet& landmarks, double degrees, bool flip, std::size_t height,
                                std::size_t width) {
  if (std::abs(degrees) > 45.0) throw ConfigError("transform_landmarks: rotation limited to 45 degrees");
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  LandmarkSet out;
  out.points.reserve(landmarks.points.size());
  for (const Landmark& p : landmarks.points) {
    const double dx = p.x - cx, dy = p.y - cy;
    double x = cx + c * dx - s * dy;
    double y = cy + s * dx + c * dy;
    if (flip) x = static_cast<double>(width) - 1.0 - x;
    std::size_t clamped = 0;
    x = clamp_coord(x, width, clamped);
    y = clamp_coord(y, height, clamped);
    if (clamped) ++out.clamped;
    out.points.push_back({x, y});
  }
  return out;
}

Heatmap build_prior(const LandmarkSet& landmarks, std::size_t image_height, std::size_t image_width,
                    std::size_t tap_height, std::size_t tap_width, double sigma) {
  return match_resolution(gaussian_heatmap(landmarks, image_height, image_width, sigma), tap_height, tap_width);
}

Tensor stack(const std::vector<Heatmap>& maps) {
  if (maps.empty()) throw ShapeError("stack: no maps");
  const std::size_t h = maps.front().height, w = maps.front().width;
  Buffer values;
  values.reserve(maps.size() * h * w);
  for (const Heatmap& m : maps) {
    if (m.height != h || m.width != w) throw ShapeError("stack: maps differ in size");
    values.insert(values.end(), m.values.begin(), m.values.end());
  }
  return Tensor({maps.size(), 1, h, w}, std::move(values));
}

LandmarkSet read_landmarks(const std::filesystem::path& path, std::optional<std::size_t> expected_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open landmark file " + path.string());
  LandmarkSet set;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    Landmark p;
    if (!(row >> p.x >> p.y)) throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected \"x y\"");
    set.points.push_back(p);
  }
  if (expected_count && set.points.size() != *expected_count)
    throw IoError(path.string() + ": expected " + std::to_string(*expected_count) + " landmarks, found " +
                  std::to_string(set.points.size()));
  return set;
}

void write_landmarks(const std::filesystem::path& path, const LandmarkSet& landmarks) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write landmark file " + path.string());
  out << std::setprecision(17);
  for (const Landmark& p : landmarks.points) out << p.x << ' ' << p.y << '\n';
  if (!out) throw IoError("failed while writing " + path.string());
}

}  // namespace pal::prior
