#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "segprobe/label_mask.hpp"

namespace segprobe {

/// 8-bit single-channel raster as stored on disk.
struct GrayImage {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> pixels;
};

/// Reads an 8-bit grayscale PNG, a palette PNG (index channel, no palette
/// expansion) or a binary PGM (P5, maxval <= 255). Anything else is a
/// MaskError(Format).
GrayImage read_gray8(const std::filesystem::path& path);

/// Header-only probe of the raster size: {h, w}.
std::array<std::size_t, 2> read_image_dims(const std::filesystem::path& path);

/// Writes by extension: ".pgm" → P5, anything else → 8-bit grayscale PNG.
void write_gray8(const std::filesystem::path& path, const GrayImage& img);

/// Palette PNG; palette entries are RGB triples, at most 256.
void write_indexed_png(const std::filesystem::path& path, const GrayImage& indices,
                       std::span<const std::array<std::uint8_t, 3>> palette);

/// Loads and validates a class-index mask.
LabelMask load_mask(const std::filesystem::path& path, int num_classes,
                    std::uint8_t ignore_index = LabelMask::kDefaultIgnore);
void save_mask(const std::filesystem::path& path, const LabelMask& mask);

}  // namespace segprobe
