#pragma once

#include <cstdint>
#include <filesystem>

#include "bdscan/network.hpp"

namespace bdscan {

// Model container layout (all integers little-endian):
//   "BSNN" | u32 version | u32 H, W, C | i32 cut index (-1 = none) | u32 layer count
//   per layer: u32 kind, units, filters, kernel, stride, pad
//   per layer: u64 parameter count, then that many float32 values
inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_model(const std::filesystem::path& path, const Network& net);
Network load_model(const std::filesystem::path& path);

}  // namespace bdscan
