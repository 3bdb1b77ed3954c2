#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rpmf/model.hpp"

namespace rpmf {

inline constexpr int kCheckpointFormatVersion = 1;

/// Versioned JSON checkpoint; tensor data is base64 little-endian f32, so
/// save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

std::string base64_encode(std::span<const uint8_t> bytes);
std::vector<uint8_t> base64_decode(std::string_view text);

}  // namespace rpmf
