#pragma once

#include <filesystem>
#include <string>

#include "dclseg/training.hpp"

namespace dclseg {

/// Binary container, little-endian:
///   char[8] "DCLSCKPT" | u32 version | u64 payload size | payload | u32 crc32(payload)
/// The payload holds the step counter, RNG state, metadata strings, named
/// parameter tensors (name, dtype, shape, row-major values) and the
/// optimizer slots.
constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_model(const ModelState& model);
ModelState deserialize_model(const std::string& bytes);

// Writes to a temporary file and renames it into place.
void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace dclseg
