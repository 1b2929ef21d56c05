#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "scdd/netcore/network_spec.hpp"

namespace scdd {

/// Planar (channels, height, width) image with 16-bit samples.
struct Image16 {
  InputShape shape{};
  std::vector<std::uint16_t> pixels;

  bool operator==(const Image16&) const = default;
};

/// Rounds [0, 1] values (clamped) to 16-bit samples.
Image16 quantize16(std::span<const double> chw, const InputShape& shape);
std::vector<double> dequantize16(const Image16& image);

/// Lossless 16-bit PNG (grayscale or RGB).
void write_png16(const std::filesystem::path& file, const Image16& image);
Image16 read_png16(const std::filesystem::path& file);

}  // namespace scdd
