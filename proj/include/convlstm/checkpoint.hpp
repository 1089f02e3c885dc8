#pragma once

#include <filesystem>
#include <string>

#include "convlstm/network.hpp"

namespace convlstm {

// Checkpoint layout:
//
//   CONVLSTM-CKPT v1\n
//   config <N>\n
//   N lines of `key = value\n` (NetworkConfig)
//   u32 tensor count
//   per tensor: u32 name length, name bytes (UTF-8), u32 rank, rank x u32 dims,
//               prod(dims) x f32 data
//
// All integers and floats are little-endian. Values are stored as 32-bit
// floats, so a model round-trips bit-exactly once quantize_to_float() has
// been applied (saving always produces the same bytes either way).
std::string checkpoint_bytes(const CompositeModel& model);
CompositeModel parse_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint");

void save_checkpoint(const CompositeModel& model, const std::filesystem::path& path);
CompositeModel load_checkpoint(const std::filesystem::path& path);

}  // namespace convlstm
