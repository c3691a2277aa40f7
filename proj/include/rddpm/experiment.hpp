#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rddpm/corruption.hpp"
#include "rddpm/losses.hpp"
#include "rddpm/metrics.hpp"
#include "rddpm/model.hpp"
#include "rddpm/trainer.hpp"

namespace rddpm {

enum class Method { kDdpm, kHuber, kLts };

/// "ddpm", "rddpm-huber", "rddpm-lts".
std::string to_string(Method method);
Method method_from_string(std::string_view name);

/// Everything needed to reproduce one benchmark run apart from the cell
/// coordinates (method, contamination, parameter, seed).
struct ExperimentProfile {
  std::string name;
  SyntheticBenchmarkSpec data;
  ConvNetConfig model;
  TrainConfig train;
  EvalConfig eval;
};

void to_json(nlohmann::json& j, const ExperimentProfile& p);
void from_json(const nlohmann::json& j, ExperimentProfile& p);

/// Named presets: "ci" (seconds), "desk" (the benchmark), "full" (large-scale
/// patch count and epochs).
ExperimentProfile profile_preset(std::string_view name);

/// Layers configuration: preset < `config` (a partial profile object) <
/// `overrides` (typically built from command-line flags). Both layers are
/// applied as JSON merge patches.
ExperimentProfile resolve_profile(std::string_view preset, const nlohmann::json& config,
                                  const nlohmann::json& overrides);

/// One point of a sweep. `param` is delta for Huber (0 selects the L1 mode),
/// lambda for LTS and unused for DDPM.
struct CellSpec {
  Method method = Method::kDdpm;
  double contamination = 0.2;
  double param = 0.0;
  std::uint64_t seed = 0;

  RobustLossSpec loss() const;
  /// Cell coordinates without the seed, e.g. "rddpm-huber c=0.2 delta=0.2".
  std::string group_label() const;

  bool operator==(const CellSpec&) const = default;
};

struct CellResult {
  CellSpec cell;
  double auroc = 0.0;
  double auprc = 0.0;
  double mse = 0.0;
  double final_loss = 0.0;  // mean over the last 10% of steps
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
  std::uint64_t parameter_checksum = 0;
};

struct CellArtifacts {
  std::unique_ptr<NoisePredictor> model;
  TrainResult training;
  EvalReport report;
  std::vector<SegmentedPatch> segmented;
};

/// Builds the cell's dataset, trains a fresh model, evaluates it. When
/// `artifacts` is given the trained model, history and heatmaps are kept.
CellResult run_cell(const ExperimentProfile& profile, const CellSpec& cell, CellArtifacts* artifacts = nullptr);

/// The dataset a cell trains and evaluates on.
std::vector<LabeledPatch> cell_dataset(const ExperimentProfile& profile, const CellSpec& cell);

struct ExperimentPlan {
  std::vector<Method> methods{Method::kDdpm, Method::kHuber};
  std::vector<double> contamination{0.2};
  std::vector<double> deltas{0.2};
  std::vector<double> lambdas{0.8};
  std::vector<std::uint64_t> seeds{0, 1, 2};

  /// Cross-product in the order method, contamination, parameter, seed.
  std::vector<CellSpec> expand() const;
};

void to_json(nlohmann::json& j, const ExperimentPlan& p);
void from_json(const nlohmann::json& j, ExperimentPlan& p);

using CellCallback = std::function<void(const CellResult&, std::size_t done, std::size_t total)>;

/// Runs every cell on `jobs` worker threads. Results come back in cell order
/// and do not depend on the job count.
std::vector<CellResult> run_cells(const ExperimentProfile& profile, std::span<const CellSpec> cells, int jobs,
                                  const CellCallback& on_done = {});

/// Mean and sample standard deviation over seeds of one sweep point.
struct AggregateRow {
  Method method = Method::kDdpm;
  double contamination = 0.0;
  double param = 0.0;
  std::size_t seeds = 0;
  double auroc_mean = 0.0, auroc_std = 0.0;
  double auprc_mean = 0.0, auprc_std = 0.0;
  double mse_mean = 0.0, mse_std = 0.0;
};

/// Groups by (method, contamination, param) in first-appearance order.
std::vector<AggregateRow> aggregate(std::span<const CellResult> results);

/// method,contamination,delta,lambda,auroc,auprc,mse,seed
void write_metrics_csv(const std::filesystem::path& path, std::span<const CellResult> results);
void write_aggregate_csv(const std::filesystem::path& path, std::span<const AggregateRow> rows);

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Minimal standalone SVG line chart.
void write_line_plot_svg(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                         const std::string& y_label, std::span<const PlotSeries> series);

/// AUROC/AUPRC against contamination (one series per method and parameter)
/// and against delta (Huber only) when the sweep varies them. Returns the
/// files written.
std::vector<std::filesystem::path> write_sweep_plots(const std::filesystem::path& dir,
                                                     std::span<const AggregateRow> rows);

/// Git blob id: SHA-1 of "blob <size>\0" + content, lowercase hex.
std::string git_blob_hash(std::string_view content);
std::string git_blob_hash_file(const std::filesystem::path& path);

/// Manifest helper: adds {"path", "bytes", "git_sha1"} entries for files.
nlohmann::json describe_files(const std::filesystem::path& root, std::span<const std::filesystem::path> files);

}  // namespace rddpm
