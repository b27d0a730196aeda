#include "pal/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include "pal/error.hpp"

namespace pal::data {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in, const std::filesystem::path& path) {
  std::string token;
  while (true) {
    const int c = in.get();
    if (c == EOF) throw IoError("corrupt PGM header in " + path.string());
    if (c == '#') {
      while (in.good() && in.get() != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path) {
  const std::string t = header_token(in, path);
  if (t.empty() || !std::all_of(t.begin(), t.end(), ::isdigit))
    throw IoError("corrupt PGM header in " + path.string());
  return std::stoul(t);
}

void write_bytes(const std::filesystem::path& path, std::size_t height, std::size_t width,
                 const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed while writing " + path.string());
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  if (header_token(in, path) != "P5") throw IoError("corrupt PGM header in " + path.string() + " (expected P5)");
  Image img;
  img.width = header_number(in, path);
  img.height = header_number(in, path);
  const std::size_t maxval = header_number(in, path);
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 255)
    throw IoError("corrupt PGM header in " + path.string() + " (only 8-bit maps are supported)");
  std::vector<std::uint8_t> bytes(img.width * img.height);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw IoError("truncated pixel data in " + path.string());
  img.pixels.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / static_cast<double>(maxval);
  return img;
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::vector<std::uint8_t> bytes(image.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
  write_bytes(path, image.height, image.width, bytes);
}

void write_pgm_normalized(const std::filesystem::path& path, std::size_t height, std::size_t width,
                          std::span<const double> values) {
  if (values.size() != height * width) throw ShapeError("write_pgm_normalized: size mismatch");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  std::vector<std::uint8_t> bytes(values.size(), 128);
  if (*hi > *lo) {
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < values.size(); ++i)
      bytes[i] = static_cast<std::uint8_t>(std::lround((values[i] - *lo) / range * 255.0));
  }
  write_bytes(path, height, width, bytes);
}

}  // namespace pal::data
