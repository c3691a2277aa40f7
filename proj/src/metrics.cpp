#include "rddpm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rddpm {

namespace {

void check_inputs(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("metric: scores and labels differ in length");
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return order;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_inputs(scores, labels);
  const std::vector<std::size_t> order = order_by_score(scores, false);
  double pos_rank_sum = 0.0;
  std::size_t positives = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j share the midrank.
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        pos_rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) throw UndefinedMetric("AUROC needs both positive and negative labels");
  const double np = static_cast<double>(positives);
  const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(negatives));
}

double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_inputs(scores, labels);
  const std::size_t total_pos = static_cast<std::size_t>(std::count_if(
      labels.begin(), labels.end(), [](std::uint8_t l) { return l != 0; }));
  if (total_pos == 0) throw UndefinedMetric("AUPRC needs at least one positive label");
  const std::vector<std::size_t> order = order_by_score(scores, true);
  double ap = 0.0;
  std::size_t tp = 0, seen = 0, i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::size_t group_pos = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      group_pos += labels[order[j]] ? 1 : 0;
      ++j;
    }
    tp += group_pos;
    seen = j;
    if (group_pos > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(seen);
      ap += precision * static_cast<double>(group_pos) / static_cast<double>(total_pos);
    }
    i = j;
  }
  return ap;
}

double masked_mse(const ImageTensor& reconstruction, const ImageTensor& input, std::span<const std::uint8_t> mask) {
  if (reconstruction.shape() != input.shape()) throw std::invalid_argument("masked_mse: shape mismatch");
  const Shape& s = input.shape();
  if (mask.size() != s.plane()) throw std::invalid_argument("masked_mse: mask size mismatch");
  double sum = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < s.channels; ++c) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      if (mask[i]) continue;
      const std::size_t k = c * s.plane() + i;
      const double d = static_cast<double>(reconstruction[k]) - static_cast<double>(input[k]);
      sum += d * d;
      ++count;
    }
  }
  if (count == 0) throw UndefinedMetric("masked_mse: no non-defective pixels");
  return sum / static_cast<double>(count);
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"auroc", r.auroc},         {"auprc", r.auprc},
                     {"masked_mse", r.masked_mse}, {"positives", r.positives},
                     {"negatives", r.negatives},   {"per_image_mean", r.per_image_mean}};
  nlohmann::json images = nlohmann::json::array();
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  for (const ImageEval& e : r.per_image) {
    images.push_back({{"index", e.index}, {"positives", e.positives}, {"auroc", num(e.auroc)},
                      {"auprc", num(e.auprc)}, {"mse", num(e.mse)}});
  }
  j["per_image"] = std::move(images);
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = nlohmann::json{{"noising_fraction", c.noising_fraction}, {"repeats", c.repeats},
                     {"per_image_mean", c.per_image_mean}, {"seed", c.seed}, {"limit", c.limit}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  c.noising_fraction = j.value("noising_fraction", 0.25);
  c.repeats = j.value("repeats", 1);
  c.per_image_mean = j.value("per_image_mean", false);
  c.seed = j.value("seed", std::uint64_t{0});
  c.limit = j.value("limit", std::size_t{0});
}

std::vector<SegmentedPatch> segment_eval_split(const NoisePredictor& model, std::span<const LabeledPatch> dataset,
                                               const NoiseSchedule& schedule, const EvalConfig& config) {
  const Rng root = Rng(config.seed).split("eval");
  std::vector<SegmentedPatch> out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].split != Split::kEval) continue;
    if (config.limit > 0 && out.size() >= config.limit) break;
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    SegmentOutput seg = segment(dataset[i].image, model, schedule, config.noising_fraction, rng, config.repeats);
    out.push_back(SegmentedPatch{i, std::move(seg.heatmap), std::move(seg.reconstruction)});
  }
  if (out.empty()) throw std::invalid_argument("evaluate: dataset has no eval-split patches");
  return out;
}

EvalReport evaluate_segmented(std::span<const LabeledPatch> dataset, std::span<const SegmentedPatch> segmented,
                              bool per_image_mean) {
  if (segmented.empty()) throw std::invalid_argument("evaluate: nothing to evaluate");
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  EvalReport report;
  report.per_image_mean = per_image_mean;
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  double mse_sum = 0.0;
  std::size_t mse_count = 0;

  for (const SegmentedPatch& sp : segmented) {
    const LabeledPatch& patch = dataset[sp.index];
    if (sp.heatmap.scores.size() != patch.mask.size()) throw std::invalid_argument("evaluate: heatmap/mask size");
    scores.insert(scores.end(), sp.heatmap.scores.begin(), sp.heatmap.scores.end());
    labels.insert(labels.end(), patch.mask.begin(), patch.mask.end());

    ImageEval e;
    e.index = sp.index;
    e.positives = patch.anomalous_pixels();
    const bool both = e.positives > 0 && e.positives < patch.mask.size();
    e.auroc = both ? auroc(sp.heatmap.scores, patch.mask) : kNaN;
    e.auprc = both ? auprc(sp.heatmap.scores, patch.mask) : kNaN;
    e.mse = kNaN;
    if (!sp.reconstruction.empty() && e.positives < patch.mask.size()) {
      // Pooled MSE accumulates raw squared differences, not per-image means.
      const Shape& s = patch.image.shape();
      for (int c = 0; c < s.channels; ++c) {
        for (std::size_t k = 0; k < s.plane(); ++k) {
          if (patch.mask[k]) continue;
          const double d = static_cast<double>(sp.reconstruction[c * s.plane() + k]) -
                           static_cast<double>(patch.image[c * s.plane() + k]);
          mse_sum += d * d;
          ++mse_count;
        }
      }
      e.mse = masked_mse(sp.reconstruction, patch.image, patch.mask);
    }
    report.per_image.push_back(e);
  }

  report.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  report.negatives = labels.size() - report.positives;
  report.masked_mse = mse_count > 0 ? mse_sum / static_cast<double>(mse_count) : kNaN;

  if (per_image_mean) {
    double a = 0.0, p = 0.0;
    std::size_t n = 0;
    for (const ImageEval& e : report.per_image) {
      if (std::isnan(e.auroc)) continue;
      a += e.auroc;
      p += e.auprc;
      ++n;
    }
    if (n == 0) throw UndefinedMetric("per-image metrics need at least one image with both classes");
    report.auroc = a / static_cast<double>(n);
    report.auprc = p / static_cast<double>(n);
  } else {
    report.auroc = auroc(scores, labels);
    report.auprc = auprc(scores, labels);
  }
  return report;
}

EvalReport evaluate(const NoisePredictor& model, std::span<const LabeledPatch> dataset,
                    const NoiseSchedule& schedule, const EvalConfig& config) {
  const std::vector<SegmentedPatch> segmented = segment_eval_split(model, dataset, schedule, config);
  return evaluate_segmented(dataset, segmented, config.per_image_mean);
}

}  // namespace rddpm
