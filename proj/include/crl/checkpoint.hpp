#pragma once

#include <filesystem>
#include <string>

#include "crl/network.hpp"

namespace crl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers and doubles little-endian:
///   "CRLM" | u32 version | u32 layer count
///   per layer: u64 in | u64 out | u8 relu
///   u64 embed_dim | u64 class_count
///   per layer: weight (in*out doubles, row-major) then bias (out doubles)
///   classifier (embed_dim*class_count doubles, row-major)
/// A sidecar `<path>.json` holds the caller-supplied metadata (config, seed).
void save_checkpoint(const ModelState& model, const std::filesystem::path& path, const std::string& sidecar_json);

ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace crl
