#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rddpm/corruption.hpp"
#include "rddpm/model.hpp"
#include "rddpm/schedule.hpp"
#include "rddpm/segmentation.hpp"

namespace rddpm {

/// A metric is undefined for the given labels (e.g. a single class).
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Mann-Whitney U / (#pos * #neg) with midranks for ties. O(n log n).
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Average precision: sum over distinct thresholds (descending) of
/// (recall increment) * (precision at that threshold); tied scores form one
/// threshold.
double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Mean squared difference over pixels with mask == 0 (all channels).
double masked_mse(const ImageTensor& reconstruction, const ImageTensor& input,
                  std::span<const std::uint8_t> mask);

struct ImageEval {
  std::size_t index = 0;
  std::size_t positives = 0;
  double auroc = 0.0;  // NaN when the image has a single class
  double auprc = 0.0;
  double mse = 0.0;    // NaN when the image is fully defective
};

struct EvalReport {
  double auroc = 0.0;
  double auprc = 0.0;
  double masked_mse = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  bool per_image_mean = false;
  std::vector<ImageEval> per_image;
};

void to_json(nlohmann::json& j, const EvalReport& r);

struct EvalConfig {
  double noising_fraction = 0.25;
  int repeats = 1;
  bool per_image_mean = false;
  std::uint64_t seed = 0;
  /// Evaluate at most this many eval patches (0 = all).
  std::size_t limit = 0;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

/// Scores plus reconstructions for a set of eval patches, in patch order.
struct SegmentedPatch {
  std::size_t index;  // position in the dataset
  Heatmap heatmap;
  ImageTensor reconstruction;
};

/// Segments every eval-split patch; patch i uses Rng(seed).split("eval").split(i).
std::vector<SegmentedPatch> segment_eval_split(const NoisePredictor& model, std::span<const LabeledPatch> dataset,
                                               const NoiseSchedule& schedule, const EvalConfig& config);

/// Metrics from already computed heatmaps. Pixels are pooled dataset-wide
/// unless config.per_image_mean is set, in which case AUROC/AUPRC are the mean
/// over images containing both classes.
EvalReport evaluate_segmented(std::span<const LabeledPatch> dataset, std::span<const SegmentedPatch> segmented,
                              bool per_image_mean);

EvalReport evaluate(const NoisePredictor& model, std::span<const LabeledPatch> dataset,
                    const NoiseSchedule& schedule, const EvalConfig& config);

}  // namespace rddpm
