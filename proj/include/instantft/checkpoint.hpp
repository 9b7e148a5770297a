#pragma once

// Little-endian checkpoint container:
//   "IFTCKPT1", u32 version, u32 kind (0 model, 1 adapters),
//   ModelSpec as 4 x i64 (channels, height, width, conv1 padding), then
//   model:    per layer: u32 rank, rank x u64 dims, weight floats, bias floats
//   adapters: u64 count, per adapter: i32 src, i32 dst, u64 r, u64 d_in, u64 d_out, A floats, B floats
// Files are written to a temporary name and renamed into place.

#include <filesystem>

#include "instantft/adapters.hpp"
#include "instantft/model.hpp"

namespace instantft {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_model(const std::filesystem::path& path, const ModelState<float>& m);
ModelState<float> load_model(const std::filesystem::path& path);

void save_adapters(const std::filesystem::path& path, const ModelSpec& spec, const AdapterSet<float>& adapters);
AdapterSet<float> load_adapters(const std::filesystem::path& path, ModelSpec* spec = nullptr);

// Writes `content` to path via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace instantft
