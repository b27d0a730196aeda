#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "pal/dataset.hpp"
#include "pal/error.hpp"
#include "pal/image.hpp"

using namespace pal;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pal_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Brightest pixel inside a window, sub-pixel by intensity centroid.
std::pair<double, double> marker_position(const data::Image& img) {
  double best = -1.0;
  std::size_t bi = 0, bj = 0;
  for (std::size_t i = 0; i < img.height; ++i)
    for (std::size_t j = 0; j < img.width; ++j)
      if (img.at(i, j) > best) {
        best = img.at(i, j);
        bi = i;
        bj = j;
      }
  double sx = 0, sy = 0, sw = 0;
  for (long di = -2; di <= 2; ++di)
    for (long dj = -2; dj <= 2; ++dj) {
      const long i = static_cast<long>(bi) + di, j = static_cast<long>(bj) + dj;
      if (i < 0 || j < 0 || i >= long(img.height) || j >= long(img.width)) continue;
      const double w = img.at(std::size_t(i), std::size_t(j));
      sx += w * double(j);
      sy += w * double(i);
      sw += w;
    }
  return {sx / sw, sy / sw};
}

}  // namespace

TEST(Synth, ByteDeterministic) {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  data::generate_dataset(a, 0, 10, "train");
  data::generate_dataset(b, 0, 10, "train");
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
  }
  EXPECT_NE(slurp(a / "images/000000.pgm"), slurp(a / "images/000001.pgm"));
}

TEST(Synth, BalancedLabels) {
  std::vector<std::size_t> counts(7, 0);
  for (std::size_t i = 0; i < 700; ++i) ++counts[std::size_t(data::synthesize_sample(0, "train", i).label)];
  for (std::size_t c : counts) EXPECT_EQ(c, 100u);
}

TEST(Synth, SamplesAreValid) {
  for (std::size_t i = 0; i < 50; ++i) {
    const data::Sample s = data::synthesize_sample(3, "test", i);
    EXPECT_EQ(s.landmarks.points.size(), 5u);
    for (const auto& p : s.landmarks.points) {
      EXPECT_GE(p.x, 0.0);
      EXPECT_LT(p.x, 64.0);
      EXPECT_GE(p.y, 0.0);
      EXPECT_LT(p.y, 64.0);
    }
    for (double v : s.image.pixels) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Synth, SplitsDiffer) {
  EXPECT_NE(data::synthesize_sample(0, "train", 0).image.pixels, data::synthesize_sample(0, "test", 0).image.pixels);
}

TEST(Synth, Errors) {
  data::SynthOptions small;
  small.height = small.width = 16;
  EXPECT_THROW(data::synthesize_sample(0, "train", 0, small), ConfigError);
  data::SynthOptions many;
  many.landmarks = 68;
  EXPECT_THROW(data::synthesize_sample(0, "train", 0, many), ConfigError);
  EXPECT_THROW(data::generate_dataset(fresh_dir("few"), 0, 3, "train"), ConfigError);
}

TEST(Pgm, RoundTripWithinQuantization) {
  const fs::path dir = fresh_dir("pgm");
  const data::Sample s = data::synthesize_sample(1, "train", 4);
  data::write_pgm(dir / "x.pgm", s.image);
  const data::Image back = data::read_pgm(dir / "x.pgm");
  ASSERT_EQ(back.height, 64u);
  for (std::size_t i = 0; i < back.pixels.size(); ++i) EXPECT_LE(std::abs(back.pixels[i] - s.image.pixels[i]), 1.0 / 255.0);
}

TEST(Pgm, HeaderWithCommentAndCorruptHeaders) {
  const fs::path dir = fresh_dir("pgm_hdr");
  {
    std::ofstream out(dir / "c.pgm", std::ios::binary);
    out << "P5\n# made by hand\n2 1\n255\n";
    out.put(char(0));
    out.put(char(255));
  }
  const data::Image img = data::read_pgm(dir / "c.pgm");
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.pixels[1], 1.0);
  std::ofstream(dir / "p2.pgm") << "P2\n2 1\n255\n0 1\n";
  EXPECT_THROW(data::read_pgm(dir / "p2.pgm"), IoError);
  std::ofstream(dir / "deep.pgm") << "P5\n2 1\n65535\n";
  EXPECT_THROW(data::read_pgm(dir / "deep.pgm"), IoError);
  std::ofstream(dir / "short.pgm") << "P5\n4 4\n255\nab";
  EXPECT_THROW(data::read_pgm(dir / "short.pgm"), IoError);
}

TEST(Pgm, ConstantMapIsMidGray) {
  const fs::path dir = fresh_dir("pgm_norm");
  const std::vector<double> flat(12, 0.3);
  data::write_pgm_normalized(dir / "flat.pgm", 3, 4, flat);
  const data::Image img = data::read_pgm(dir / "flat.pgm");
  EXPECT_EQ(img.height, 3u);
  EXPECT_EQ(img.width, 4u);
  for (double v : img.pixels) EXPECT_NEAR(v, 128.0 / 255.0, 1e-12);
}

TEST(Manifest, RoundTrip) {
  const fs::path dir = fresh_dir("manifest");
  data::generate_dataset(dir, 5, 14, "train");
  const data::DatasetManifest m = data::load_manifest(dir / "manifest.json");
  EXPECT_EQ(m.entries.size(), 14u);
  EXPECT_EQ(m.class_counts(), std::vector<std::size_t>(7, 2));
  const auto samples = data::load_samples(m);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const data::Sample orig = data::synthesize_sample(5, "train", i);
    EXPECT_EQ(samples[i].label, orig.label);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(samples[i].landmarks.points[k].x, orig.landmarks.points[k].x);
    for (std::size_t p = 0; p < orig.image.pixels.size(); ++p)
      ASSERT_LE(std::abs(samples[i].image.pixels[p] - orig.image.pixels[p]), 1.0 / 255.0);
  }
}

TEST(Manifest, MissingLandmarkFileNamesEntry) {
  const fs::path dir = fresh_dir("manifest_missing");
  data::generate_dataset(dir, 5, 7, "train");
  fs::remove(dir / "landmarks/000003.txt");
  try {
    data::load_manifest(dir / "manifest.json");
    FAIL();
  } catch (const IoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("entry 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("000003.txt"), std::string::npos) << msg;
  }
}

TEST(Manifest, LabelOutOfRange) {
  const fs::path dir = fresh_dir("manifest_label");
  data::DatasetManifest m = data::generate_dataset(dir, 5, 7, "train");
  m.entries[2].label = 9;
  data::write_manifest(dir / "manifest.json", m);
  EXPECT_THROW(data::load_manifest(dir / "manifest.json"), ConfigError);
}

TEST(Manifest, LandmarkCountMismatch) {
  const fs::path dir = fresh_dir("manifest_count");
  const data::DatasetManifest m = data::generate_dataset(dir, 5, 7, "train");
  std::ofstream(dir / m.entries[0].landmarks) << "1 2\n3 4\n";
  EXPECT_THROW(data::load_sample(data::load_manifest(dir / "manifest.json"), m.entries[0]), IoError);
}

TEST(Manifest, Malformed) {
  const fs::path dir = fresh_dir("manifest_bad");
  std::ofstream(dir / "manifest.json") << "{\"entries\": 3}";
  EXPECT_THROW(data::load_manifest(dir / "manifest.json"), ConfigError);
  EXPECT_THROW(data::load_manifest(dir / "absent.json"), IoError);
}

TEST(Augment, IdentityWhenNoRotationNoFlip) {
  const data::Sample s = data::synthesize_sample(0, "train", 1);
  const data::Sample a = data::augment(s, 0.0, false);
  EXPECT_EQ(a.image.pixels, s.image.pixels);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(a.landmarks.points[k].x, s.landmarks.points[k].x);
    EXPECT_EQ(a.landmarks.points[k].y, s.landmarks.points[k].y);
  }
}

TEST(Augment, FlipSwapsEyesAcrossMidline) {
  const data::Sample s = data::synthesize_sample(0, "train", 2);
  const data::Sample f = data::augment(s, 0.0, true);
  const double mid = 31.5;
  EXPECT_LT(s.landmarks.points[data::kLeftEye].x, mid);
  EXPECT_GT(f.landmarks.points[data::kLeftEye].x, mid);
  EXPECT_GT(s.landmarks.points[data::kRightEye].x, mid);
  EXPECT_LT(f.landmarks.points[data::kRightEye].x, mid);
  EXPECT_EQ(f.image.at(10, 63 - 5), s.image.at(10, 5));
}

TEST(Augment, MarkerFollowsLandmark) {
  for (double deg : {-10.0, -6.5, 3.0, 10.0})
    for (bool flip : {false, true}) {
      data::Sample s;
      s.image = {64, 64, Buffer(64 * 64, 0.0)};
      const double x = 22.0, y = 41.0;
      s.image.pixels[std::size_t(y) * 64 + std::size_t(x)] = 1.0;
      s.landmarks.points = {{x, y}};
      const data::Sample a = data::augment(s, deg, flip);
      const auto [mx, my] = marker_position(a.image);
      EXPECT_LE(std::hypot(mx - a.landmarks.points[0].x, my - a.landmarks.points[0].y), 1.5)
          << "deg " << deg << " flip " << flip;
    }
}

TEST(Augment, RandomParametersAreDeterministic) {
  const data::Sample s = data::synthesize_sample(0, "train", 3);
  Rng r1(7), r2(7);
  EXPECT_EQ(data::augment(s, r1).image.pixels, data::augment(s, r2).image.pixels);
}

TEST(Mask, ZeroesPatchesAtKeypoints) {
  const data::Sample s = data::synthesize_sample(0, "train", 0);
  const data::Image m = data::mask_keypoints(s, data::evidence_keypoints(), 9);
  for (std::size_t k : data::evidence_keypoints()) {
    const auto& p = s.landmarks.points[k];
    const auto r = std::size_t(std::lround(p.y)), c = std::size_t(std::lround(p.x));
    for (std::size_t i = r - 4; i <= r + 4; ++i)
      for (std::size_t j = c - 4; j <= c + 4; ++j) EXPECT_EQ(m.at(i, j), 0.0);
  }
  const auto& nose = s.landmarks.points[data::kNose];
  EXPECT_EQ(m.at(std::size_t(std::lround(nose.y)), std::size_t(std::lround(nose.x))),
            s.image.at(std::size_t(std::lround(nose.y)), std::size_t(std::lround(nose.x))));
}
