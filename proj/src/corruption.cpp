#include "rddpm/corruption.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "rddpm/image_io.hpp"

namespace rddpm {

std::size_t LabeledPatch::anomalous_pixels() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

void TextureParams::validate() const {
  if (min_gratings < 1 || max_gratings < min_gratings) throw std::invalid_argument("texture: bad grating count");
  if (!(min_period > 0) || max_period < min_period) throw std::invalid_argument("texture: bad period range");
  if (!(clip > 0 && clip <= 1)) throw std::invalid_argument("texture: clip must lie in (0, 1]");
}

void to_json(nlohmann::json& j, const TextureParams& p) {
  j = nlohmann::json{{"min_gratings", p.min_gratings}, {"max_gratings", p.max_gratings},
                     {"min_period", p.min_period},     {"max_period", p.max_period},
                     {"amplitude", p.amplitude},       {"orientation_jitter", p.orientation_jitter},
                     {"noise_std", p.noise_std},       {"clip", p.clip}};
}

void from_json(const nlohmann::json& j, TextureParams& p) {
  TextureParams d;
  p.min_gratings = j.value("min_gratings", d.min_gratings);
  p.max_gratings = j.value("max_gratings", d.max_gratings);
  p.min_period = j.value("min_period", d.min_period);
  p.max_period = j.value("max_period", d.max_period);
  p.amplitude = j.value("amplitude", d.amplitude);
  p.orientation_jitter = j.value("orientation_jitter", d.orientation_jitter);
  p.noise_std = j.value("noise_std", d.noise_std);
  p.clip = j.value("clip", d.clip);
}

namespace {
struct Grating {
  double angle;
  double period;
  double weight;
};
}  // namespace

std::vector<LabeledPatch> generate_texture_dataset(std::size_t n, const TextureParams& params, Rng& rng,
                                                   Shape shape) {
  params.validate();
  if (!shape.valid()) throw std::invalid_argument("generate_texture_dataset: invalid shape");

  Rng family_rng = rng.split("family");
  const int count = family_rng.uniform_int(params.min_gratings, params.max_gratings);
  std::vector<Grating> family(count);
  double weight_sum = 0.0;
  for (Grating& g : family) {
    g.angle = family_rng.uniform() * std::numbers::pi;
    g.period = params.min_period + family_rng.uniform() * (params.max_period - params.min_period);
    g.weight = 0.5 + family_rng.uniform();
    weight_sum += g.weight;
  }
  for (Grating& g : family) g.weight *= params.amplitude / weight_sum;

  std::vector<LabeledPatch> patches(n);
  const Rng patch_root = rng.split("patches");
  for (std::size_t i = 0; i < n; ++i) {
    Rng prng = patch_root.split(static_cast<std::uint64_t>(i));
    LabeledPatch& p = patches[i];
    p.image = ImageTensor(shape);
    p.mask.assign(shape.plane(), 0);
    std::vector<double> phase(count), angle(count);
    for (int g = 0; g < count; ++g) {
      phase[g] = prng.uniform() * 2.0 * std::numbers::pi;
      angle[g] = family[g].angle + params.orientation_jitter * prng.normal();
    }
    for (int c = 0; c < shape.channels; ++c) {
      const double gain = 1.0 - 0.1 * c;  // channels differ slightly in contrast
      for (int y = 0; y < shape.height; ++y) {
        for (int x = 0; x < shape.width; ++x) {
          double v = 0.0;
          for (int g = 0; g < count; ++g) {
            const double proj = x * std::cos(angle[g]) + y * std::sin(angle[g]);
            v += family[g].weight * std::cos(2.0 * std::numbers::pi * proj / family[g].period + phase[g]);
          }
          v = gain * v + params.noise_std * prng.normal();
          p.image.at(c, y, x) = static_cast<float>(std::clamp(v, -params.clip, params.clip));
        }
      }
    }
  }
  return patches;
}

void CorruptionSpec::validate() const {
  if (!(contamination_ratio >= 0.0 && contamination_ratio <= 1.0)) {
    throw std::invalid_argument("contamination ratio must lie in [0, 1]");
  }
  if (!(block_fraction > 0.0 && block_fraction <= 1.0)) {
    throw std::invalid_argument("block fraction must lie in (0, 1]");
  }
  if (!(intensity_factor > 1.0)) throw std::invalid_argument("intensity factor must exceed 1");
}

void to_json(nlohmann::json& j, const CorruptionSpec& s) {
  j = nlohmann::json{{"contamination_ratio", s.contamination_ratio},
                     {"block_fraction", s.block_fraction},
                     {"intensity_factor", s.intensity_factor},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, CorruptionSpec& s) {
  CorruptionSpec d;
  s.contamination_ratio = j.value("contamination_ratio", d.contamination_ratio);
  s.block_fraction = j.value("block_fraction", d.block_fraction);
  s.intensity_factor = j.value("intensity_factor", d.intensity_factor);
  s.seed = j.value("seed", d.seed);
}

std::size_t corrupt_patch(LabeledPatch& patch, double block_fraction, double intensity_factor, Rng& rng) {
  const Shape& s = patch.image.shape();
  if (s.height % kBlockSize != 0 || s.width % kBlockSize != 0) {
    throw std::invalid_argument("corrupt: patch side must be divisible by 2");
  }
  if (patch.mask.size() != s.plane()) patch.mask.assign(s.plane(), 0);
  const int blocks_x = s.width / kBlockSize;
  const std::size_t n_blocks = static_cast<std::size_t>(s.height / kBlockSize) * blocks_x;
  const auto k = static_cast<std::size_t>(std::lround(block_fraction * static_cast<double>(n_blocks)));
  for (std::size_t b : sample_without_replacement(n_blocks, k, rng)) {
    const int by = static_cast<int>(b / blocks_x) * kBlockSize;
    const int bx = static_cast<int>(b % blocks_x) * kBlockSize;
    for (int y = by; y < by + kBlockSize; ++y) {
      for (int x = bx; x < bx + kBlockSize; ++x) {
        for (int c = 0; c < s.channels; ++c) {
          float& v = patch.image.at(c, y, x);
          // Scaling happens in [0, 2] offset space so dark pixels brighten.
          v = static_cast<float>(std::clamp((v + 1.0) * intensity_factor - 1.0, -1.0, 1.0));
        }
        patch.mask[static_cast<std::size_t>(y) * s.width + x] = 1;
      }
    }
  }
  patch.contaminated = patch.contaminated || k > 0;
  return k;
}

std::vector<LabeledPatch> corrupt(std::vector<LabeledPatch> patches, const CorruptionSpec& spec, Rng& rng) {
  spec.validate();
  for (const LabeledPatch& p : patches) {
    if (p.image.shape().height % kBlockSize != 0 || p.image.shape().width % kBlockSize != 0) {
      throw std::invalid_argument("corrupt: patch side must be divisible by 2");
    }
  }
  const auto target = static_cast<std::size_t>(
      std::lround(spec.contamination_ratio * static_cast<double>(patches.size())));
  Rng pick = rng.split("pick");
  const Rng blocks = rng.split("blocks");
  for (std::size_t idx : sample_without_replacement(patches.size(), target, pick)) {
    Rng brng = blocks.split(static_cast<std::uint64_t>(idx));
    corrupt_patch(patches[idx], spec.block_fraction, spec.intensity_factor, brng);
  }
  return patches;
}

std::vector<ImageTensor> tile_image(const ImageTensor& image, int patch) {
  const Shape& s = image.shape();
  if (patch < 1) throw std::invalid_argument("tile_image: patch must be positive");
  std::vector<ImageTensor> tiles;
  for (int y0 = 0; y0 + patch <= s.height; y0 += patch) {
    for (int x0 = 0; x0 + patch <= s.width; x0 += patch) {
      ImageTensor t(Shape{s.channels, patch, patch});
      for (int c = 0; c < s.channels; ++c) {
        for (int y = 0; y < patch; ++y) {
          for (int x = 0; x < patch; ++x) t.at(c, y, x) = image.at(c, y0 + y, x0 + x);
        }
      }
      tiles.push_back(std::move(t));
    }
  }
  return tiles;
}

namespace {

namespace fs = std::filesystem;

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
  std::vector<fs::path> dirs;
  if (!fs::is_directory(dir)) return dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

std::vector<LabeledPatch> patches_of(const ImageTensor& image, const ImageTensor* mask, int patch,
                                     Split split) {
  std::vector<LabeledPatch> out;
  const std::vector<ImageTensor> tiles = tile_image(image, patch);
  std::vector<ImageTensor> mask_tiles;
  if (mask) mask_tiles = tile_image(*mask, patch);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    LabeledPatch p;
    p.image = tiles[i];
    p.split = split;
    p.mask.assign(static_cast<std::size_t>(patch) * patch, 0);
    if (mask) {
      for (std::size_t j = 0; j < p.mask.size(); ++j) p.mask[j] = mask_tiles[i][j] > 0.0f ? 1 : 0;
    }
    p.contaminated = p.anomalous_pixels() > 0;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

std::vector<LabeledPatch> load_mvtec_layout(const fs::path& root, const MvtecOptions& options) {
  const fs::path base = root / options.category;
  if (!fs::is_directory(base)) throw std::runtime_error("MVTec category not found: " + base.string());
  const int res = options.resolution;

  std::vector<LabeledPatch> train;
  for (const fs::path& file : sorted_pngs(base / "train" / "good")) {
    ImageTensor img = resize_bilinear(read_png(file, options.channels), res, res);
    auto ps = patches_of(img, nullptr, options.patch, Split::kTrain);
    train.insert(train.end(), ps.begin(), ps.end());
  }

  // Eval patches grouped per defective image so that real contamination can
  // move whole images into training.
  std::vector<LabeledPatch> eval;
  std::vector<std::vector<LabeledPatch>> defective_images;
  for (const fs::path& defect_dir : sorted_subdirs(base / "test")) {
    const std::string defect = defect_dir.filename().string();
    for (const fs::path& file : sorted_pngs(defect_dir)) {
      ImageTensor img = resize_bilinear(read_png(file, options.channels), res, res);
      if (defect == "good") {
        auto ps = patches_of(img, nullptr, options.patch, Split::kEval);
        eval.insert(eval.end(), ps.begin(), ps.end());
        continue;
      }
      const fs::path mask_path = base / "ground_truth" / defect / (file.stem().string() + "_mask.png");
      if (!fs::exists(mask_path)) {
        throw std::runtime_error("missing ground-truth mask for " + file.string() + " (expected " +
                                 mask_path.string() + ")");
      }
      ImageTensor mask = resize_bilinear(read_png(mask_path, 1), res, res);
      defective_images.push_back(patches_of(img, &mask, options.patch, Split::kEval));
    }
  }

  if (options.contaminate_with_real > 0.0) {
    if (options.contaminate_with_real >= 1.0) {
      throw std::invalid_argument("contaminate-with-real ratio must lie in [0, 1)");
    }
    // Target: defective patches make up the requested share of training.
    const double ratio = options.contaminate_with_real;
    const auto target = static_cast<std::size_t>(std::lround(ratio / (1.0 - ratio) * train.size()));
    std::vector<std::size_t> order(defective_images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = Rng(options.seed).split("real-contamination");
    shuffle<std::size_t>(order, rng);
    std::size_t moved = 0;
    std::vector<bool> used(defective_images.size(), false);
    for (std::size_t idx : order) {
      if (moved >= target) break;
      for (LabeledPatch& p : defective_images[idx]) {
        p.split = Split::kTrain;
        ++moved;
      }
      used[idx] = true;
    }
    for (std::size_t i = 0; i < defective_images.size(); ++i) {
      auto& dst = used[i] ? train : eval;
      dst.insert(dst.end(), defective_images[i].begin(), defective_images[i].end());
    }
  } else {
    for (auto& ps : defective_images) eval.insert(eval.end(), ps.begin(), ps.end());
  }

  train.insert(train.end(), eval.begin(), eval.end());
  return train;
}

void to_json(nlohmann::json& j, const SyntheticBenchmarkSpec& s) {
  j = nlohmann::json{{"n_train", s.n_train},
                     {"n_eval", s.n_eval},
                     {"channels", s.shape.channels},
                     {"height", s.shape.height},
                     {"width", s.shape.width},
                     {"texture", s.texture},
                     {"train_corruption", s.train_corruption},
                     {"eval_defects", s.eval_defects},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticBenchmarkSpec& s) {
  SyntheticBenchmarkSpec d;
  s.n_train = j.value("n_train", d.n_train);
  s.n_eval = j.value("n_eval", d.n_eval);
  s.shape = Shape{j.value("channels", 1), j.value("height", 28), j.value("width", 28)};
  s.texture = j.contains("texture") ? j.at("texture").get<TextureParams>() : d.texture;
  s.train_corruption = j.contains("train_corruption") ? j.at("train_corruption").get<CorruptionSpec>()
                                                      : d.train_corruption;
  s.eval_defects = j.contains("eval_defects") ? j.at("eval_defects").get<CorruptionSpec>() : d.eval_defects;
  s.seed = j.value("seed", d.seed);
}

std::vector<LabeledPatch> build_synthetic_benchmark(const SyntheticBenchmarkSpec& spec) {
  const Rng root(spec.seed);
  Rng texture_rng = root.split("texture");
  std::vector<LabeledPatch> all =
      generate_texture_dataset(spec.n_train + spec.n_eval, spec.texture, texture_rng, spec.shape);
  std::vector<LabeledPatch> train(std::make_move_iterator(all.begin()),
                                  std::make_move_iterator(all.begin() + spec.n_train));
  std::vector<LabeledPatch> eval(std::make_move_iterator(all.begin() + spec.n_train),
                                 std::make_move_iterator(all.end()));
  Rng train_rng = root.split("train-corruption");
  train = corrupt(std::move(train), spec.train_corruption, train_rng);
  Rng eval_rng = root.split("eval-defects");
  eval = corrupt(std::move(eval), spec.eval_defects, eval_rng);
  for (LabeledPatch& p : eval) p.split = Split::kEval;
  train.insert(train.end(), std::make_move_iterator(eval.begin()), std::make_move_iterator(eval.end()));
  return train;
}

namespace {

constexpr char kDatasetMagic[4] = {'R', 'D', 'P', 'D'};
constexpr std::uint32_t kDatasetVersion = 1;

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian hosts");

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("dataset cache truncated");
  return value;
}

}  // namespace

void save_dataset(const fs::path& path, const Dataset& dataset) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset cache: " + path.string());
  Shape shape = dataset.patches.empty() ? Shape{1, 28, 28} : dataset.patches.front().image.shape();
  out.write(kDatasetMagic, 4);
  put<std::uint32_t>(out, kDatasetVersion);
  put<std::uint64_t>(out, dataset.patches.size());
  put<std::uint32_t>(out, shape.channels);
  put<std::uint32_t>(out, shape.height);
  put<std::uint32_t>(out, shape.width);
  const std::string spec = dataset.spec.dump();
  put<std::uint64_t>(out, spec.size());
  out.write(spec.data(), static_cast<std::streamsize>(spec.size()));
  const std::size_t mask_bytes = (shape.plane() + 7) / 8;
  std::vector<std::uint8_t> packed(mask_bytes);
  for (const LabeledPatch& p : dataset.patches) {
    if (p.image.shape() != shape) throw std::invalid_argument("save_dataset: mixed patch shapes");
    out.write(reinterpret_cast<const char*>(p.image.data().data()),
              static_cast<std::streamsize>(p.image.size() * sizeof(float)));
    std::fill(packed.begin(), packed.end(), 0);
    for (std::size_t i = 0; i < p.mask.size(); ++i) {
      if (p.mask[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
    out.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(mask_bytes));
    const std::uint8_t flags = static_cast<std::uint8_t>((p.contaminated ? 1 : 0) |
                                                         (p.split == Split::kEval ? 2 : 0));
    put<std::uint8_t>(out, flags);
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Dataset load_dataset(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset cache: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kDatasetMagic)) {
    throw std::runtime_error("not a dataset cache: " + path.string());
  }
  if (get<std::uint32_t>(in) != kDatasetVersion) throw std::runtime_error("unsupported dataset version");
  const auto count = get<std::uint64_t>(in);
  Shape shape;
  shape.channels = static_cast<int>(get<std::uint32_t>(in));
  shape.height = static_cast<int>(get<std::uint32_t>(in));
  shape.width = static_cast<int>(get<std::uint32_t>(in));
  const auto spec_len = get<std::uint64_t>(in);
  std::string spec(spec_len, '\0');
  in.read(spec.data(), static_cast<std::streamsize>(spec_len));
  Dataset ds;
  ds.spec = nlohmann::json::parse(spec);
  const std::size_t mask_bytes = (shape.plane() + 7) / 8;
  std::vector<std::uint8_t> packed(mask_bytes);
  ds.patches.resize(count);
  for (LabeledPatch& p : ds.patches) {
    p.image = ImageTensor(shape);
    in.read(reinterpret_cast<char*>(p.image.data().data()),
            static_cast<std::streamsize>(p.image.size() * sizeof(float)));
    in.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(mask_bytes));
    p.mask.resize(shape.plane());
    for (std::size_t i = 0; i < p.mask.size(); ++i) p.mask[i] = (packed[i / 8] >> (i % 8)) & 1u;
    const auto flags = get<std::uint8_t>(in);
    p.contaminated = flags & 1;
    p.split = (flags & 2) ? Split::kEval : Split::kTrain;
  }
  return ds;
}

}  // namespace rddpm
