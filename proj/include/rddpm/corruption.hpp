#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rddpm/core.hpp"

namespace rddpm {

enum class Split : std::uint8_t { kTrain = 0, kEval = 1 };

/// One training or evaluation patch with its pixel-level ground truth.
struct LabeledPatch {
  ImageTensor image;
  std::vector<std::uint8_t> mask;  // H x W, 1 = anomalous pixel
  bool contaminated = false;
  Split split = Split::kTrain;

  std::size_t anomalous_pixels() const;
};

/// Procedural texture family: a fixed set of oriented sinusoidal gratings
/// shared by the whole dataset, with per-patch random phase, small
/// orientation jitter and pixel noise.
struct TextureParams {
  int min_gratings = 2;
  int max_gratings = 4;
  double min_period = 5.0;  // pixels
  double max_period = 12.0;
  double amplitude = 0.75;  // summed grating amplitude
  double orientation_jitter = 0.05;  // radians, std-dev per patch
  double noise_std = 0.04;
  double clip = 0.98;  // output clamped to [-clip, clip]

  void validate() const;
};

void to_json(nlohmann::json& j, const TextureParams& p);
void from_json(const nlohmann::json& j, TextureParams& p);

/// n normal patches of `shape`; patch i depends only on (rng, i).
std::vector<LabeledPatch> generate_texture_dataset(std::size_t n, const TextureParams& params, Rng& rng,
                                                   Shape shape = Shape{1, 28, 28});

/// Contamination protocol: exactly round(ratio * n) patches are corrupted; in
/// each, exactly round(block_fraction * blocks) aligned 2x2 blocks are pushed
/// through v -> clamp((v + 1) * factor - 1, -1, 1).
struct CorruptionSpec {
  double contamination_ratio = 0.2;
  double block_fraction = 0.7;
  double intensity_factor = 5.0;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const CorruptionSpec& s);
void from_json(const nlohmann::json& j, CorruptionSpec& s);

inline constexpr int kBlockSize = 2;

/// Corrupts one patch in place (mask and flag updated). Returns the number of
/// altered blocks.
std::size_t corrupt_patch(LabeledPatch& patch, double block_fraction, double intensity_factor, Rng& rng);

std::vector<LabeledPatch> corrupt(std::vector<LabeledPatch> patches, const CorruptionSpec& spec, Rng& rng);

/// Non-overlapping tiles of side `patch`, row-major; the remainder is dropped.
std::vector<ImageTensor> tile_image(const ImageTensor& image, int patch);

struct MvtecOptions {
  std::string category;
  int resolution = 100;
  int patch = 28;
  int channels = 1;
  /// Fraction of the training set replaced by patches of real defective
  /// images (0 keeps training defect-free).
  double contaminate_with_real = 0.0;
  std::uint64_t seed = 0;
};

/// Loads <root>/<category>/{train/good, test/<defect>, ground_truth/<defect>}.
/// Images are resized bilinearly to resolution x resolution and tiled; masks
/// are resized the same way and thresholded at one half.
std::vector<LabeledPatch> load_mvtec_layout(const std::filesystem::path& root, const MvtecOptions& options);

/// Train + eval patches for the synthetic benchmark. Clean images for a seed
/// are identical across contamination levels.
struct SyntheticBenchmarkSpec {
  std::size_t n_train = 5000;
  std::size_t n_eval = 500;
  Shape shape{1, 28, 28};
  TextureParams texture;
  CorruptionSpec train_corruption;  // contamination of the training split
  CorruptionSpec eval_defects{0.5, 0.3, 5.0, 0};  // defective share of the eval split
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const SyntheticBenchmarkSpec& s);
void from_json(const nlohmann::json& j, SyntheticBenchmarkSpec& s);

std::vector<LabeledPatch> build_synthetic_benchmark(const SyntheticBenchmarkSpec& spec);

struct Dataset {
  std::vector<LabeledPatch> patches;
  nlohmann::json spec;
};

/// Binary cache: "RDPD", u32 version, u64 count, u32 C/H/W, u64 spec length,
/// spec JSON, then per patch float32 image, bit-packed mask, u8 flags
/// (bit 0 contaminated, bit 1 eval split). Little-endian.
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace rddpm
