#include "rddpm/segmentation.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "rddpm/diffusion.hpp"
#include "rddpm/image_io.hpp"

namespace rddpm {

Heatmap heatmap_from_reconstruction(const ImageTensor& input, const ImageTensor& reconstruction) {
  if (input.shape() != reconstruction.shape()) throw std::invalid_argument("heatmap: shape mismatch");
  const Shape& s = input.shape();
  Heatmap h;
  h.height = s.height;
  h.width = s.width;
  h.scores.assign(s.plane(), 0.0);
  for (int c = 0; c < s.channels; ++c) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const std::size_t k = c * s.plane() + i;
      h.scores[i] += std::abs(static_cast<double>(reconstruction[k]) - static_cast<double>(input[k]));
    }
  }
  if (s.channels > 1) {
    for (double& v : h.scores) v /= s.channels;
  }
  return h;
}

SegmentOutput segment(const ImageTensor& x_in, const NoisePredictor& model, const NoiseSchedule& schedule,
                      double noising_fraction, Rng& rng, int repeats) {
  if (repeats < 1) throw std::invalid_argument("segment: repeats must be >= 1");
  if (x_in.shape() != model.shape()) throw std::invalid_argument("segment: input shape mismatch");
  SegmentOutput out;
  if (repeats == 1) {
    out.reconstruction = reconstruct(x_in, noising_fraction, model, schedule, rng);
    out.heatmap = heatmap_from_reconstruction(x_in, out.reconstruction);
  } else {
    for (int k = 0; k < repeats; ++k) {
      Rng child = rng.split(static_cast<std::uint64_t>(k));
      out.reconstruction = reconstruct(x_in, noising_fraction, model, schedule, child);
      Heatmap h = heatmap_from_reconstruction(x_in, out.reconstruction);
      if (k == 0) {
        out.heatmap = std::move(h);
      } else {
        for (std::size_t i = 0; i < h.scores.size(); ++i) out.heatmap.scores[i] += h.scores[i];
      }
    }
    for (double& v : out.heatmap.scores) v /= repeats;
  }
  out.heatmap.noising_fraction = noising_fraction;
  return out;
}

std::vector<int> tile_origins(int extent, int patch, int stride) {
  if (patch < 1 || stride < 1) throw std::invalid_argument("tile_origins: patch and stride must be positive");
  if (extent < patch) throw std::invalid_argument("image smaller than patch");
  std::vector<int> origins;
  for (int o = 0; o + patch <= extent; o += stride) origins.push_back(o);
  if (origins.back() + patch < extent) origins.push_back(extent - patch);
  return origins;
}

Heatmap segment_image(const ImageTensor& image, const NoisePredictor& model, const NoiseSchedule& schedule,
                      const PatchingConfig& patching, double noising_fraction, Rng& rng, int repeats) {
  const Shape& s = image.shape();
  const Shape& ps = model.shape();
  if (ps.height != patching.patch || ps.width != patching.patch || ps.channels != s.channels) {
    throw std::invalid_argument("segment_image: model shape does not match the patch configuration");
  }
  const std::vector<int> ys = tile_origins(s.height, patching.patch, patching.stride);
  const std::vector<int> xs = tile_origins(s.width, patching.patch, patching.stride);

  Heatmap out;
  out.height = s.height;
  out.width = s.width;
  out.noising_fraction = noising_fraction;
  out.scores.assign(s.plane(), 0.0);
  std::vector<int> coverage(s.plane(), 0);

  std::uint64_t index = 0;
  for (int y0 : ys) {
    for (int x0 : xs) {
      ImageTensor tile(ps);
      for (int c = 0; c < s.channels; ++c) {
        for (int y = 0; y < ps.height; ++y) {
          for (int x = 0; x < ps.width; ++x) tile.at(c, y, x) = image.at(c, y0 + y, x0 + x);
        }
      }
      Rng tile_rng = rng.split(index++);
      const Heatmap h = segment(tile, model, schedule, noising_fraction, tile_rng, repeats).heatmap;
      for (int y = 0; y < ps.height; ++y) {
        for (int x = 0; x < ps.width; ++x) {
          const std::size_t k = static_cast<std::size_t>(y0 + y) * s.width + (x0 + x);
          out.scores[k] += h.at(y, x);
          ++coverage[k];
        }
      }
    }
  }
  for (std::size_t k = 0; k < out.scores.size(); ++k) {
    if (coverage[k] > 1) out.scores[k] /= coverage[k];
  }
  return out;
}

void write_heatmap_raw(const std::filesystem::path& path, const Heatmap& heatmap) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write heatmap: " + path.string());
  for (double v : heatmap.scores) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof(float));
  }
}

ImageTensor heatmap_image(const Heatmap& heatmap) {
  ImageTensor img(Shape{1, heatmap.height, heatmap.width});
  for (std::size_t i = 0; i < heatmap.scores.size(); ++i) img[i] = static_cast<float>(heatmap.scores[i]);
  return img;
}

void write_heatmap_png(const std::filesystem::path& path, const Heatmap& heatmap) {
  write_png(path, normalize_for_display(heatmap_image(heatmap)));
}

}  // namespace rddpm
