#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rddpm/core.hpp"
#include "rddpm/model.hpp"
#include "rddpm/schedule.hpp"

namespace rddpm {

/// Per-pixel anomaly scores (H x W, nonnegative).
struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<double> scores;
  std::string source_id;
  double noising_fraction = 0.0;

  double at(int y, int x) const { return scores[static_cast<std::size_t>(y) * width + x]; }
};

/// Channel-mean of |reconstruction - input| per pixel.
Heatmap heatmap_from_reconstruction(const ImageTensor& input, const ImageTensor& reconstruction);

struct SegmentOutput {
  Heatmap heatmap;
  ImageTensor reconstruction;  // last reconstruction drawn
};

/// Reconstructs `x_in` through the partial reverse chain and scores the
/// difference. repeats > 1 averages the heatmaps of independent
/// reconstructions drawn from rng.split(k).
SegmentOutput segment(const ImageTensor& x_in, const NoisePredictor& model, const NoiseSchedule& schedule,
                      double noising_fraction, Rng& rng, int repeats = 1);

struct PatchingConfig {
  int patch = 28;
  int stride = 28;
};

/// Tiles a larger image, segments each tile with rng.split(tile index) and
/// stitches; pixels covered by several tiles get the mean of their scores.
/// A final row/column of tiles is aligned to the border when the stride does
/// not land on it.
Heatmap segment_image(const ImageTensor& image, const NoisePredictor& model, const NoiseSchedule& schedule,
                      const PatchingConfig& patching, double noising_fraction, Rng& rng, int repeats = 1);

/// Tile origins along one axis for segment_image.
std::vector<int> tile_origins(int extent, int patch, int stride);

/// Raw float32 scores, row-major, no header.
void write_heatmap_raw(const std::filesystem::path& path, const Heatmap& heatmap);

/// 8-bit visualisation, min-max normalised per heatmap.
void write_heatmap_png(const std::filesystem::path& path, const Heatmap& heatmap);

ImageTensor heatmap_image(const Heatmap& heatmap);

}  // namespace rddpm
