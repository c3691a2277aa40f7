#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "rddpm/image_io.hpp"
#include "rddpm/metrics.hpp"
#include "rddpm/segmentation.hpp"
#include "rddpm/trainer.hpp"
#include "test_support.hpp"

using namespace rddpm;

namespace {

const NoiseSchedule& schedule200() {
  static const NoiseSchedule s = NoiseSchedule::linear(200, 0.001, 0.02);
  return s;
}

ImageTensor gaussian_image(Shape shape, Rng& rng, double s) {
  ImageTensor x(shape);
  for (float& v : x.data()) v = static_cast<float>(s * rng.normal());
  return x;
}

ImageTensor crop(const ImageTensor& img, int y0, int x0, int side) {
  ImageTensor t(Shape{img.shape().channels, side, side});
  for (int c = 0; c < img.shape().channels; ++c) {
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) t.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    }
  }
  return t;
}

}  // namespace

TEST(Heatmap, ChannelMeanAbsoluteDifference) {
  ImageTensor a(Shape{2, 1, 2}), b(Shape{2, 1, 2});
  a[0] = 0.5f, a[1] = -0.5f, a[2] = 0.0f, a[3] = 1.0f;
  b[0] = 0.0f, b[1] = 0.5f, b[2] = 0.25f, b[3] = 1.0f;
  const Heatmap h = heatmap_from_reconstruction(a, b);
  EXPECT_EQ(h.height, 1);
  EXPECT_EQ(h.width, 2);
  EXPECT_DOUBLE_EQ(h.scores[0], (0.5 + 0.25) / 2);
  EXPECT_DOUBLE_EQ(h.scores[1], (1.0 + 0.0) / 2);
  EXPECT_THROW(heatmap_from_reconstruction(a, ImageTensor(Shape{1, 1, 2})), std::invalid_argument);
}

TEST(TileOrigins, AlignsLastTileToBorder) {
  EXPECT_EQ(tile_origins(56, 28, 28), (std::vector<int>{0, 28}));
  EXPECT_EQ(tile_origins(56, 28, 14), (std::vector<int>{0, 14, 28}));
  EXPECT_EQ(tile_origins(60, 28, 28), (std::vector<int>{0, 28, 32}));
  EXPECT_THROW(tile_origins(20, 28, 28), std::invalid_argument);
}

TEST(SegmentImage, DisjointTilesMatchPerPatchHeatmaps) {
  const Shape patch{1, 28, 28};
  const auto oracle = support::gaussian_oracle(patch, schedule200(), 0.0, 0.3);
  Rng data(1);
  const ImageTensor img = gaussian_image(Shape{1, 56, 56}, data, 0.3);
  Rng rng(2);
  const Heatmap h = segment_image(img, oracle, schedule200(), PatchingConfig{28, 28}, 0.25, rng);
  ASSERT_EQ(h.height, 56);
  int k = 0;
  for (int y0 : {0, 28}) {
    for (int x0 : {0, 28}) {
      Rng tile_rng = rng.split(static_cast<std::uint64_t>(k++));
      const Heatmap t = segment(crop(img, y0, x0, 28), oracle, schedule200(), 0.25, tile_rng).heatmap;
      for (int y = 0; y < 28; ++y) {
        for (int x = 0; x < 28; ++x) ASSERT_EQ(h.at(y0 + y, x0 + x), t.at(y, x));
      }
    }
  }
  EXPECT_EQ(k, 4);
}

TEST(SegmentImage, OverlapsAreAveraged) {
  const Shape patch{1, 28, 28};
  const auto oracle = support::gaussian_oracle(patch, schedule200(), 0.0, 0.3);
  Rng data(3);
  const ImageTensor img = gaussian_image(Shape{1, 56, 56}, data, 0.3);
  Rng rng(4);
  const Heatmap h = segment_image(img, oracle, schedule200(), PatchingConfig{28, 14}, 0.25, rng);
  std::vector<double> sum(56 * 56, 0.0);
  std::vector<int> cover(56 * 56, 0);
  int k = 0;
  for (int y0 : {0, 14, 28}) {
    for (int x0 : {0, 14, 28}) {
      Rng tile_rng = rng.split(static_cast<std::uint64_t>(k++));
      const Heatmap t = segment(crop(img, y0, x0, 28), oracle, schedule200(), 0.25, tile_rng).heatmap;
      for (int y = 0; y < 28; ++y) {
        for (int x = 0; x < 28; ++x) {
          sum[(y0 + y) * 56 + x0 + x] += t.at(y, x);
          ++cover[(y0 + y) * 56 + x0 + x];
        }
      }
    }
  }
  EXPECT_EQ(cover[20 * 56 + 20], 4);
  EXPECT_EQ(cover[0], 1);
  for (int i = 0; i < 56 * 56; ++i) ASSERT_NEAR(h.scores[i], sum[i] / cover[i], 1e-15);
}

TEST(Segment, RepeatsReduceVariance) {
  const Shape patch{1, 28, 28};
  const auto oracle = support::gaussian_oracle(patch, schedule200(), 0.0, 0.3);
  Rng data(5);
  const ImageTensor x = gaussian_image(patch, data, 0.3);
  std::vector<double> var;
  for (int k : {1, 4, 16}) {
    const int draws = 24;
    std::vector<double> sum(784, 0.0), sq(784, 0.0);
    for (int d = 0; d < draws; ++d) {
      Rng rng = Rng(100).split(static_cast<std::uint64_t>(d));
      const Heatmap h = segment(x, oracle, schedule200(), 0.25, rng, k).heatmap;
      for (int i = 0; i < 784; ++i) sum[i] += h.scores[i], sq[i] += h.scores[i] * h.scores[i];
    }
    double v = 0.0;
    for (int i = 0; i < 784; ++i) v += (sq[i] - sum[i] * sum[i] / draws) / (draws - 1);
    var.push_back(v / 784);
  }
  EXPECT_LT(var[1], var[0]);
  EXPECT_LT(var[2], var[1]);
  EXPECT_LT(var[2], var[0] / 6);  // ideal ratio is 16
  Rng rng(1);
  EXPECT_THROW(segment(x, oracle, schedule200(), 0.25, rng, 0), std::invalid_argument);
}

TEST(Segment, EndToEndDefectsScoreHigher) {
  SyntheticBenchmarkSpec spec;
  spec.n_train = 400;
  spec.n_eval = 20;
  spec.texture.noise_std = 0.0;
  spec.train_corruption.contamination_ratio = 0.2;
  spec.eval_defects = CorruptionSpec{1.0, 0.2, 5.0, 0};
  const auto data = build_synthetic_benchmark(spec);
  ConvNetConfig mc;
  mc.width = 8;
  mc.depth = 3;
  ConvNet<float> net(mc);
  TrainConfig tc;
  tc.epochs = 2;
  tc.adam.learning_rate = 1e-3;
  tc.loss = RobustLossSpec::huber(0.2);
  train(data, tc, net);

  EvalConfig ec;
  const auto seg = segment_eval_split(net, data, schedule200(), ec);
  ASSERT_EQ(seg.size(), 20u);
  double in = 0.0, out = 0.0;
  std::size_t n_in = 0, n_out = 0;
  for (const auto& s : seg) {
    const auto& mask = data[s.index].mask;
    for (std::size_t k = 0; k < mask.size(); ++k) {
      (mask[k] ? in : out) += s.heatmap.scores[k];
      (mask[k] ? n_in : n_out) += 1;
    }
  }
  EXPECT_GT(in / n_in, out / n_out);
}

TEST(HeatmapIo, RawAndPng) {
  const auto dir = std::filesystem::temp_directory_path() / "rddpm_heatmap_test";
  Heatmap h;
  h.height = 2, h.width = 3;
  h.scores = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  write_heatmap_raw(dir / "h.f32", h);
  write_heatmap_png(dir / "h.png", h);
  EXPECT_EQ(std::filesystem::file_size(dir / "h.f32"), 6 * sizeof(float));
  const ImageTensor back = read_png(dir / "h.png");
  EXPECT_FLOAT_EQ(back[0], -1.0f);
  EXPECT_FLOAT_EQ(back[5], 1.0f);
  std::filesystem::remove_all(dir);
}
