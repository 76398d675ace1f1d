#pragma once

#include <filesystem>
#include <string>

#include "segprobe/probe.hpp"

namespace segprobe {

/// Binary probe checkpoint, all integers and floats little-endian:
///
///   "SPCK" | u32 version (1) | u32 dim | u32 classes | u32 flags
///   | u32 metadata length | metadata JSON bytes
///   | f32 weight[dim × classes] | f32 bias[classes]
///   | (flags & 1) f32 mean[dim] | f32 inv_std[dim]
///
/// The metadata carries the resolved training config and the store hash; it
/// holds no timestamps, so identical runs give identical bytes.
struct Checkpoint {
  ProbeParams params;
  std::string metadata_json;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws StoreError(MissingFile) or StoreError(Decode).
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace segprobe
