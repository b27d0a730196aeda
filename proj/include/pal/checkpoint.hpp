#pragma once

#include <filesystem>

#include "pal/model.hpp"

namespace pal::nn {

struct Checkpoint {
  ModelSpec spec;
  Parameters params;
};

// File layout:
//   line 1   "PALCKPT <header_bytes>\n"
//   header   JSON {"format", "version", "model", "tensors": [{name, shape, offset}]}
//   payload  little-endian float64 arrays; offsets are bytes from payload start
//
// Writes go to a temporary sibling and are renamed into place, so a crash never
// leaves a truncated checkpoint under the final name.
void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const Parameters& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pal::nn
