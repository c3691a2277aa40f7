#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "rddpm/metrics.hpp"
#include "test_support.hpp"

using namespace rddpm;
using support::auprc_thresholds;
using support::auroc_pairs;

namespace {

struct Instance {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

Instance random_instance(Rng& rng) {
  Instance in;
  const std::size_t n = 2 + rng.uniform_index(999);
  const int levels = rng.uniform() < 0.5 ? 5 : 0;  // half the instances are tie-heavy
  const double prevalence = 0.02 + 0.5 * rng.uniform();
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = rng.uniform() < prevalence;
    double s = rng.normal() + (pos ? 0.8 : 0.0);
    if (levels) s = std::round(s * 2.0) / 2.0;
    in.scores.push_back(s);
    in.labels.push_back(pos);
  }
  in.labels[0] = 1;
  in.labels[1] = 0;
  return in;
}

}  // namespace

TEST(Metrics, MatchOraclesOnRandomInstancesWithTies) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Instance in = random_instance(rng);
    ASSERT_NEAR(auroc(in.scores, in.labels), auroc_pairs(in.scores, in.labels), 1e-9) << trial;
    ASSERT_NEAR(auprc(in.scores, in.labels), auprc_thresholds(in.scores, in.labels), 1e-9) << trial;
  }
}

TEST(Metrics, AurocInvariantToMonotoneTransforms) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Instance in = random_instance(rng);
    std::vector<double> t1, t2;
    for (double s : in.scores) t1.push_back(std::exp(s)), t2.push_back(3.0 * s + 7.0);
    EXPECT_NEAR(auroc(t1, in.labels), auroc(in.scores, in.labels), 1e-12);
    EXPECT_NEAR(auroc(t2, in.labels), auroc(in.scores, in.labels), 1e-12);
    EXPECT_NEAR(auprc(t1, in.labels), auprc(in.scores, in.labels), 1e-12);
  }
}

TEST(Metrics, PerfectConstantAndReversed) {
  const std::vector<std::uint8_t> y{0, 1, 0, 1, 1, 0, 0, 0};
  std::vector<double> oracle(y.begin(), y.end());
  EXPECT_DOUBLE_EQ(auroc(oracle, y), 1.0);
  EXPECT_DOUBLE_EQ(auprc(oracle, y), 1.0);
  const std::vector<double> flat(8, 0.3);
  EXPECT_DOUBLE_EQ(auroc(flat, y), 0.5);
  EXPECT_DOUBLE_EQ(auprc(flat, y), 3.0 / 8.0);
  std::vector<double> rev;
  for (double s : oracle) rev.push_back(-s);
  EXPECT_DOUBLE_EQ(auroc(rev, y), 0.0);
}

TEST(Metrics, SingleClassIsUndefined) {
  const std::vector<double> s{0.1, 0.2};
  EXPECT_THROW(auroc(s, std::vector<std::uint8_t>{0, 0}), UndefinedMetric);
  EXPECT_THROW(auprc(s, std::vector<std::uint8_t>{0, 0}), UndefinedMetric);
  EXPECT_DOUBLE_EQ(auprc(s, std::vector<std::uint8_t>{1, 1}), 1.0);
  EXPECT_THROW(auroc(s, std::vector<std::uint8_t>{1}), std::invalid_argument);
}

TEST(MaskedMse, WorkedExampleAndMaskingRules) {
  ImageTensor recon(Shape{1, 1, 2}), input(Shape{1, 1, 2});
  recon[0] = 0.5f, recon[1] = 3.0f;
  const std::vector<std::uint8_t> mask{0, 1};
  EXPECT_DOUBLE_EQ(masked_mse(recon, input, mask), 0.25);
  EXPECT_THROW(masked_mse(recon, input, std::vector<std::uint8_t>{1, 1}), UndefinedMetric);
  // All channels of an unmasked pixel count.
  ImageTensor r3(Shape{2, 1, 1}), i3(Shape{2, 1, 1});
  r3[0] = 1.0f, r3[1] = 0.0f;
  EXPECT_DOUBLE_EQ(masked_mse(r3, i3, std::vector<std::uint8_t>{0}), 0.5);
}

namespace {

std::vector<LabeledPatch> two_patches() {
  std::vector<LabeledPatch> d(3);
  for (auto& p : d) {
    p.image = ImageTensor(Shape{1, 2, 2});
    p.mask = {0, 0, 0, 0};
    p.split = Split::kEval;
  }
  d[0].split = Split::kTrain;
  d[1].mask = {1, 0, 0, 0};
  d[2].mask = {0, 1, 1, 0};
  return d;
}

SegmentedPatch seg(std::size_t index, std::vector<double> scores) {
  Heatmap h;
  h.height = h.width = 2;
  h.scores = std::move(scores);
  return SegmentedPatch{index, h, ImageTensor(Shape{1, 2, 2}, 0.5f)};
}

}  // namespace

TEST(Evaluate, PoolingConcatenatesPixels) {
  const auto data = two_patches();
  const std::vector<SegmentedPatch> s{seg(1, {0.9, 0.1, 0.4, 0.2}), seg(2, {0.3, 0.5, 0.35, 0.6})};
  const EvalReport r = evaluate_segmented(data, s, false);
  const std::vector<double> all{0.9, 0.1, 0.4, 0.2, 0.3, 0.5, 0.35, 0.6};
  const std::vector<std::uint8_t> lab{1, 0, 0, 0, 0, 1, 1, 0};
  EXPECT_DOUBLE_EQ(r.auroc, auroc(all, lab));
  EXPECT_DOUBLE_EQ(r.auprc, auprc(all, lab));
  EXPECT_EQ(r.positives, 3u);
  EXPECT_EQ(r.negatives, 5u);
  // Pooled masked MSE over the 5 normal pixels of the 0.5 reconstructions.
  EXPECT_DOUBLE_EQ(r.masked_mse, 0.25);
  // Order of patches does not matter.
  const std::vector<SegmentedPatch> swapped{s[1], s[0]};
  EXPECT_DOUBLE_EQ(evaluate_segmented(data, swapped, false).auroc, r.auroc);
  ASSERT_EQ(r.per_image.size(), 2u);
  EXPECT_DOUBLE_EQ(r.per_image[1].auroc, auroc(s[1].heatmap.scores, data[2].mask));

  const EvalReport m = evaluate_segmented(data, s, true);
  EXPECT_DOUBLE_EQ(m.auroc, 0.5 * (r.per_image[0].auroc + r.per_image[1].auroc));
}

TEST(Evaluate, OracleHeatmapsScorePerfectly) {
  const auto data = two_patches();
  std::vector<SegmentedPatch> s;
  for (std::size_t i : {1u, 2u}) s.push_back(seg(i, std::vector<double>(data[i].mask.begin(), data[i].mask.end())));
  const EvalReport r = evaluate_segmented(data, s, false);
  EXPECT_DOUBLE_EQ(r.auroc, 1.0);
  EXPECT_DOUBLE_EQ(r.auprc, 1.0);
}

TEST(Evaluate, OnlyEvalSplitAndConfigJson) {
  const auto data = two_patches();
  const auto s = NoiseSchedule::linear(20, 0.001, 0.02);
  const support::FunctionPredictor zero(Shape{1, 2, 2}, [](const ImageTensor&, int, std::span<float> out) {
    std::fill(out.begin(), out.end(), 0.0f);
  });
  EvalConfig cfg;
  cfg.repeats = 2;
  const auto segs = segment_eval_split(zero, data, s, cfg);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[0].index, 1u);
  cfg.limit = 1;
  EXPECT_EQ(segment_eval_split(zero, data, s, cfg).size(), 1u);
  const nlohmann::json j = cfg;
  const EvalConfig back = j.get<EvalConfig>();
  EXPECT_EQ(back.repeats, 2);
  EXPECT_EQ(back.limit, 1u);
}
