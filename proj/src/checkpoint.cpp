#include "pal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pal/error.hpp"

namespace pal::nn {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr const char* kMagic = "PALCKPT";

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const Parameters& params) {
  check_parameters(spec, params);
  nlohmann::json header{{"format", "pal-checkpoint"}, {"version", 1}, {"model", spec},
                        {"tensors", nlohmann::json::array()}};
  std::size_t offset = 0;
  for (const auto& [name, t] : params) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size() * sizeof(double);
  }
  const std::string text = header.dump();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out << kMagic << ' ' << text.size() << '\n' << text;
    for (const auto& [name, t] : params)
      out.write(reinterpret_cast<const char*>(t.values().data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    out.flush();
    if (!out) throw IoError("failed while writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  std::istringstream first(line);
  std::string magic;
  std::size_t header_bytes = 0;
  if (!(first >> magic >> header_bytes) || magic != kMagic)
    throw IoError(path.string() + " is not a checkpoint file");
  std::string text(header_bytes, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_bytes));
  if (!in) throw IoError("truncated checkpoint header in " + path.string());

  Checkpoint ckpt;
  std::vector<std::tuple<std::string, Shape, std::size_t>> entries;
  try {
    const auto header = nlohmann::json::parse(text);
    if (header.at("format") != "pal-checkpoint" || header.at("version") != 1)
      throw IoError("unsupported checkpoint format in " + path.string());
    ckpt.spec = header.at("model").get<ModelSpec>();
    for (const auto& t : header.at("tensors"))
      entries.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<Shape>(),
                           t.at("offset").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }

  const std::streampos payload = in.tellg();
  for (auto& [name, shape, offset] : entries) {
    Buffer values(numel(shape));
    in.seekg(payload + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw IoError("truncated tensor '" + name + "' in " + path.string());
    ckpt.params.emplace(name, Tensor(shape, std::move(values)));
  }
  check_parameters(ckpt.spec, ckpt.params);
  return ckpt;
}

}  // namespace pal::nn
