#include "pal/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "pal/error.hpp"

namespace pal::data {

namespace fs = std::filesystem;

namespace {

enum class Bar { Horizontal, Vertical, Diagonal };

// (eye pattern, mouth pattern) per class. Diagonal bars are mirrored between
// the left and right keypoint so that every class is invariant under flips.
constexpr std::array<std::pair<Bar, Bar>, 9> kClassCodes{{
    {Bar::Horizontal, Bar::Horizontal},
    {Bar::Horizontal, Bar::Vertical},
    {Bar::Vertical, Bar::Horizontal},
    {Bar::Vertical, Bar::Vertical},
    {Bar::Diagonal, Bar::Horizontal},
    {Bar::Horizontal, Bar::Diagonal},
    {Bar::Diagonal, Bar::Diagonal},
    {Bar::Vertical, Bar::Diagonal},
    {Bar::Diagonal, Bar::Vertical},
}};

// Canonical keypoints as fractions of (width - 1, height - 1), left-right symmetric.
constexpr std::array<std::array<double, 2>, 5> kCanonical{{
    {20.0 / 63.0, 22.0 / 63.0},
    {43.0 / 63.0, 22.0 / 63.0},
    {31.5 / 63.0, 33.0 / 63.0},
    {24.0 / 63.0, 45.0 / 63.0},
    {39.0 / 63.0, 45.0 / 63.0},
}};

constexpr double kBarHalfLength = 3.0;

double bar_angle(Bar bar, bool right_side) {
  switch (bar) {
    case Bar::Horizontal: return 0.0;
    case Bar::Vertical: return 90.0;
    case Bar::Diagonal: return right_side ? 135.0 : 45.0;
  }
  return 0.0;
}

// Adds an anti-aliased bar of the given orientation (degrees, counter-clockwise
// on screen) centred at (cx, cy).
void stamp_bar(Image& img, double cx, double cy, double degrees, double amplitude) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double dx = std::cos(a), dy = -std::sin(a);
  const long r = static_cast<long>(std::ceil(kBarHalfLength + 2.0));
  const long x0 = std::lround(cx), y0 = std::lround(cy);
  for (long y = y0 - r; y <= y0 + r; ++y)
    for (long x = x0 - r; x <= x0 + r; ++x) {
      if (x < 0 || y < 0 || x >= static_cast<long>(img.width) || y >= static_cast<long>(img.height)) continue;
      const double px = static_cast<double>(x) - cx, py = static_cast<double>(y) - cy;
      const double t = std::clamp(px * dx + py * dy, -kBarHalfLength, kBarHalfLength);
      const double dist = std::hypot(px - t * dx, py - t * dy);
      const double w = std::clamp(1.5 - dist, 0.0, 1.0);
      img.pixels[static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x)] += amplitude * w;
    }
}

double bilinear(const Image& img, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const double ax = x - fx, ay = y - fy;
  auto px = [&](long xx, long yy) {
    if (xx < 0 || yy < 0 || xx >= static_cast<long>(img.width) || yy >= static_cast<long>(img.height)) return 0.0;
    return img.pixels[static_cast<std::size_t>(yy) * img.width + static_cast<std::size_t>(xx)];
  };
  return (1 - ay) * ((1 - ax) * px(x0, y0) + ax * px(x0 + 1, y0)) +
         ay * ((1 - ax) * px(x0, y0 + 1) + ax * px(x0 + 1, y0 + 1));
}

std::string numbered(const char* dir, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s/%06zu.%s", dir, i, ext);
  return buf;
}

}  // namespace

std::vector<std::size_t> DatasetManifest::class_counts() const {
  std::vector<std::size_t> counts(n_classes, 0);
  for (const ManifestEntry& e : entries)
    if (e.label >= 0 && static_cast<std::size_t>(e.label) < n_classes) ++counts[static_cast<std::size_t>(e.label)];
  return counts;
}

std::vector<std::size_t> evidence_keypoints() { return {kLeftEye, kRightEye, kMouthLeft, kMouthRight}; }

Sample synthesize_sample(std::uint64_t seed, const std::string& split, std::size_t index,
                         const SynthOptions& opt) {
  if (opt.n_classes < 2 || opt.n_classes > kClassCodes.size())
    throw ConfigError("synthetic data supports 2.." + std::to_string(kClassCodes.size()) + " classes");
  if (opt.landmarks != kCanonical.size()) throw ConfigError("synthetic data uses exactly 5 landmarks");
  if (opt.height < 32 || opt.width < 32) throw ConfigError("canvas too small for patches (need at least 32x32)");
  if (opt.max_distractors < opt.min_distractors) throw ConfigError("distractor range is empty");

  Rng rng = Rng(seed).split(split).split(index);
  Sample s;
  s.label = static_cast<int>(index % opt.n_classes);
  s.image = {opt.height, opt.width, Buffer(opt.height * opt.width, opt.background)};

  const double sx = static_cast<double>(opt.width) - 1.0, sy = static_cast<double>(opt.height) - 1.0;
  const double shift_x = rng.uniform(-opt.shift, opt.shift), shift_y = rng.uniform(-opt.shift, opt.shift);
  for (const auto& c : kCanonical)
    s.landmarks.points.push_back({c[0] * sx + shift_x + rng.uniform(-opt.jitter, opt.jitter),
                                  c[1] * sy + shift_y + rng.uniform(-opt.jitter, opt.jitter)});

  const auto [eyes, mouth] = kClassCodes[static_cast<std::size_t>(s.label)];
  const auto& p = s.landmarks.points;
  stamp_bar(s.image, p[kLeftEye].x, p[kLeftEye].y, bar_angle(eyes, false), opt.amplitude);
  stamp_bar(s.image, p[kRightEye].x, p[kRightEye].y, bar_angle(eyes, true), opt.amplitude);
  stamp_bar(s.image, p[kMouthLeft].x, p[kMouthLeft].y, bar_angle(mouth, false), opt.amplitude);
  stamp_bar(s.image, p[kMouthRight].x, p[kMouthRight].y, bar_angle(mouth, true), opt.amplitude);

  const std::size_t distractors = opt.min_distractors + rng.below(opt.max_distractors - opt.min_distractors + 1);
  const double margin = kBarHalfLength + 2.0;
  for (std::size_t d = 0; d < distractors; ++d) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double x = rng.uniform(margin, sx - margin), y = rng.uniform(margin, sy - margin);
      const bool clear = std::all_of(p.begin(), p.end(), [&](const prior::Landmark& k) {
        return std::hypot(k.x - x, k.y - y) >= opt.clearance;
      });
      if (!clear) continue;
      stamp_bar(s.image, x, y, 45.0 * static_cast<double>(rng.below(4)), opt.amplitude);
      break;
    }
  }
  for (double& v : s.image.pixels) v = std::clamp(v + rng.normal(0.0, opt.noise), 0.0, 1.0);
  return s;
}

DatasetManifest generate_dataset(const fs::path& dir, std::uint64_t seed, std::size_t n, const std::string& split,
                                 const SynthOptions& options) {
  if (n < options.n_classes) throw ConfigError("need at least one sample per class");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "landmarks");
  DatasetManifest manifest;
  manifest.root = dir;
  manifest.split = split;
  manifest.n_classes = options.n_classes;
  manifest.landmark_count = options.landmarks;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample s = synthesize_sample(seed, split, i, options);
    ManifestEntry e{numbered("images", i, "pgm"), numbered("landmarks", i, "txt"), s.label};
    write_pgm(dir / e.image, s.image);
    prior::write_landmarks(dir / e.landmarks, s.landmarks);
    manifest.entries.push_back(std::move(e));
  }
  write_manifest(dir / "manifest.json", manifest);
  return manifest;
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  nlohmann::json j{{"split", m.split},
                   {"n_classes", m.n_classes},
                   {"landmark_count", m.landmark_count},
                   {"entries", nlohmann::json::array()}};
  for (const ManifestEntry& e : m.entries)
    j["entries"].push_back({{"image", e.image}, {"landmarks", e.landmarks}, {"label", e.label}});
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw IoError("failed while writing " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    const auto j = nlohmann::json::parse(in);
    m.split = j.value("split", std::string());
    m.n_classes = j.at("n_classes").get<std::size_t>();
    m.landmark_count = j.at("landmark_count").get<std::size_t>();
    for (const auto& je : j.at("entries"))
      m.entries.push_back({je.at("image").get<std::string>(), je.at("landmarks").get<std::string>(),
                           je.at("label").get<int>()});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed manifest " + path.string() + ": " + e.what());
  }
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const ManifestEntry& e = m.entries[i];
    const std::string where = "manifest entry " + std::to_string(i) + " (" + e.image + ")";
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= m.n_classes)
      throw ConfigError(where + ": label " + std::to_string(e.label) + " outside [0, " +
                        std::to_string(m.n_classes) + ")");
    if (!fs::exists(m.root / e.image)) throw IoError(where + ": missing image file " + e.image);
    if (!fs::exists(m.root / e.landmarks)) throw IoError(where + ": missing landmark file " + e.landmarks);
  }
  return m;
}

Sample load_sample(const DatasetManifest& m, const ManifestEntry& e) {
  Sample s;
  s.image = read_pgm(m.root / e.image);
  s.landmarks = prior::read_landmarks(m.root / e.landmarks, m.landmark_count);
  s.label = e.label;
  return s;
}

std::vector<Sample> load_samples(const DatasetManifest& m) {
  std::vector<Sample> out;
  out.reserve(m.entries.size());
  for (const ManifestEntry& e : m.entries) out.push_back(load_sample(m, e));
  return out;
}

Sample augment(const Sample& sample, double degrees, bool flip) {
  const Image& src = sample.image;
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cx = (static_cast<double>(src.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(src.height) - 1.0) / 2.0;

  Sample out;
  out.label = sample.label;
  out.image = {src.height, src.width, Buffer(src.pixels.size())};
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = 0; x < src.width; ++x) {
      // Output pixel after the mirror comes from this pixel of the rotated image.
      const double rx = flip ? static_cast<double>(src.width) - 1.0 - static_cast<double>(x) : static_cast<double>(x);
      const double dx = rx - cx, dy = static_cast<double>(y) - cy;
      // Inverse rotation into the source image.
      const double sxp = cx + c * dx + s * dy;
      const double syp = cy - s * dx + c * dy;
      out.image.pixels[y * src.width + x] = degrees == 0.0 ? src.at(y, static_cast<std::size_t>(rx)) : bilinear(src, sxp, syp);
    }
  out.landmarks = prior::transform_landmarks(sample.landmarks, degrees, flip, src.height, src.width);
  return out;
}

Sample augment(const Sample& sample, Rng& rng) {
  const double degrees = rng.uniform(-10.0, 10.0);
  const bool flip = rng.bernoulli(0.5);
  return augment(sample, degrees, flip);
}

Image mask_keypoints(const Sample& sample, const std::vector<std::size_t>& keypoints, std::size_t size) {
  Image img = sample.image;
  const long half = static_cast<long>(size / 2);
  for (std::size_t k : keypoints) {
    const prior::Landmark& p = sample.landmarks.points.at(k);
    const long x0 = std::lround(p.x), y0 = std::lround(p.y);
    for (long y = y0 - half; y <= y0 + half; ++y)
      for (long x = x0 - half; x <= x0 + half; ++x)
        if (x >= 0 && y >= 0 && x < static_cast<long>(img.width) && y < static_cast<long>(img.height))
          img.pixels[static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x)] = 0.0;
  }
  return img;
}

}  // namespace pal::data
