#pragma once

#include "vpfc/model/weights.hpp"

#include <filesystem>
#include <iosfwd>

namespace vpfc::model {

// Binary layout, all integers little-endian:
//   magic "VPFCCKPT" | u32 format version | u32 header bytes | header JSON
//   u32 tensor count | per tensor: u32 name bytes, name, u32 rank,
//   u64 dims[rank], f64 data[prod(dims)] (row-major, IEEE-754 LE)
// The header records the ModelConfig and the weights version tag.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const ModelWeights& weights);
ModelWeights read_checkpoint(std::istream& in);

/// Writes to a temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const ModelWeights& weights);
ModelWeights load_checkpoint(const std::filesystem::path& path);

}  // namespace vpfc::model
