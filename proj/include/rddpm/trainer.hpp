#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "rddpm/corruption.hpp"
#include "rddpm/losses.hpp"
#include "rddpm/model.hpp"
#include "rddpm/schedule.hpp"

namespace rddpm {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators and the step counter.
struct AdamState {
  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update of theta in place.
void optimizer_step(std::span<float> theta, std::span<const float> grad, AdamState& state,
                    const AdamConfig& config);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 4;
  AdamConfig adam;
  RobustLossSpec loss;
  ScheduleParams schedule;
  std::uint64_t seed = 0;
  /// Write a checkpoint every this many steps (0 disables).
  std::int64_t checkpoint_interval = 0;
  std::filesystem::path checkpoint_dir;
  /// Stop after this many optimizer steps (0 = run all epochs).
  std::int64_t max_steps = 0;
  /// Exponential moving average of the parameters, copied into the model when
  /// training ends and written to checkpoints (0 disables).
  double ema_decay = 0.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  std::size_t kept_samples = 0;

  bool operator==(const LossRecord&) const = default;
};

/// Everything a step observer can inspect; `model` still holds the pre-update
/// parameters.
struct StepInfo {
  std::int64_t step;
  int epoch;
  std::span<const NoisySample> batch;
  const LossResult& loss;
  std::span<const float> gradient;
  const NoisePredictor& model;
};

using StepObserver = std::function<void(const StepInfo&)>;

/// Raised when the loss turns NaN or infinite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  std::vector<LossRecord> history;
  std::int64_t steps = 0;
};

/// Trains `model` on the train-split patches of `dataset`; eval-split patches
/// are never read. Each step draws one (t, eps) per sample, builds x_t in
/// closed form, evaluates the configured loss and takes one Adam step.
TrainResult train(std::span<const LabeledPatch> dataset, const TrainConfig& config, NoisePredictor& model,
                  const StepObserver& observer = {});

struct Checkpoint {
  nlohmann::json model;  // NoisePredictor::describe()
  TrainConfig config;
  int epoch = 0;
  std::vector<LossRecord> history;
  std::vector<float> parameters;
};

/// "RDPM", u32 version, u64 length + canonical JSON (model, config, schedule,
/// epoch, history), u64 count + float32 parameters. Little-endian.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the predictor and loads the saved parameters.
std::unique_ptr<NoisePredictor> restore_model(const Checkpoint& checkpoint);

/// CSV with header step,epoch,loss,kept_samples.
void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history);

/// FNV-1a over the raw parameter bytes.
std::uint64_t parameter_checksum(std::span<const float> parameters);

}  // namespace rddpm
