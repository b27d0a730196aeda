#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pal/image.hpp"
#include "pal/prior.hpp"
#include "pal/rng.hpp"

namespace pal::data {

struct Sample {
  Image image;
  prior::LandmarkSet landmarks;
  int label = 0;
};

struct ManifestEntry {
  std::string image;      // relative to the manifest directory
  std::string landmarks;  // relative to the manifest directory
  int label = 0;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::string split;
  std::size_t n_classes = 7;
  std::size_t landmark_count = 5;
  std::vector<ManifestEntry> entries;

  std::vector<std::size_t> class_counts() const;
};

/// Synthetic keypoint-classification set. Five keypoints (two eyes, nose, two
/// mouth corners) are jittered around a canonical layout; the label is carried
/// only by the orientation of bars stamped at the eye and mouth keypoints.
/// Label-independent distractor bars are scattered away from the keypoints.
struct SynthOptions {
  std::size_t n_classes = 7;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t landmarks = 5;
  double noise = 0.05;
  double background = 0.2;
  double shift = 3.0;       // global keypoint offset, uniform in [-shift, shift] px
  double jitter = 1.5;      // per-keypoint offset on top of the shift
  double amplitude = 0.7;   // bar intensity
  std::size_t min_distractors = 6;
  std::size_t max_distractors = 10;
  double clearance = 10.0;  // minimum distance of a distractor from any keypoint
};

enum Keypoint : std::size_t { kLeftEye = 0, kRightEye = 1, kNose = 2, kMouthLeft = 3, kMouthRight = 4 };

/// Indices of the keypoints that carry class evidence.
std::vector<std::size_t> evidence_keypoints();

/// Sample `index` of `split`; labels cycle through the classes so any n that
/// is a multiple of n_classes is exactly balanced.
Sample synthesize_sample(std::uint64_t seed, const std::string& split, std::size_t index,
                         const SynthOptions& options = {});

/// Writes images/, landmarks/ and manifest.json under `dir`.
DatasetManifest generate_dataset(const std::filesystem::path& dir, std::uint64_t seed, std::size_t n,
                                 const std::string& split, const SynthOptions& options = {});

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
/// Parses and validates a manifest (files exist, labels in range).
DatasetManifest load_manifest(const std::filesystem::path& path);
Sample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry);
std::vector<Sample> load_samples(const DatasetManifest& manifest);

/// Rotation about the image centre (bilinear, zero fill) then optional mirror,
/// applied identically to the image and its landmarks.
Sample augment(const Sample& sample, double degrees, bool flip);
/// Rotation uniform in [-10, 10] degrees, flip with probability 0.5.
Sample augment(const Sample& sample, Rng& rng);

/// Copy with a size x size square zeroed around each listed keypoint.
Image mask_keypoints(const Sample& sample, const std::vector<std::size_t>& keypoints, std::size_t size);

}  // namespace pal::data
