#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rddpm/core.hpp"

namespace rddpm {

/// Reads an 8-bit grayscale or RGB(A) PNG and maps p in [0, 255] to 2p/255 - 1.
/// `channels` = 0 keeps the stored channel count (alpha dropped); 1 converts
/// RGB to luma; 3 replicates gray into RGB.
ImageTensor read_png(const std::filesystem::path& path, int channels = 0);

/// Writes a 1- or 3-channel tensor as 8-bit PNG, clamping to [-1, 1] first.
void write_png(const std::filesystem::path& path, const ImageTensor& image);

/// Raw 8-bit encoding used by write_png; exposed for round-trip tests.
std::vector<std::uint8_t> to_pixels(const ImageTensor& image);

/// Bilinear resampling with half-pixel centres (align_corners = false).
ImageTensor resize_bilinear(const ImageTensor& image, int height, int width);

/// Per-image min-max normalisation into [-1, 1] for display.
ImageTensor normalize_for_display(const ImageTensor& image);

}  // namespace rddpm
