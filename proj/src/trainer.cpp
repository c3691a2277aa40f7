#include "rddpm/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "rddpm/diffusion.hpp"
#include "rddpm/gradient.hpp"

namespace rddpm {

void optimizer_step(std::span<float> theta, std::span<const float> grad, AdamState& state,
                    const AdamConfig& config) {
  if (grad.size() != theta.size() || state.m.size() != theta.size() || state.v.size() != theta.size()) {
    throw std::invalid_argument("optimizer_step: size mismatch");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    theta[i] = static_cast<float>(theta[i] - config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon));
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
  if (!(adam.learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be > 0");
  if (max_steps < 0 || checkpoint_interval < 0) throw std::invalid_argument("TrainConfig: negative step count");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw std::invalid_argument("TrainConfig: ema_decay must lie in [0, 1)");
  loss.validate();
  NoiseSchedule::from_params(schedule);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.adam.learning_rate},
                     {"adam_beta1", c.adam.beta1},
                     {"adam_beta2", c.adam.beta2},
                     {"adam_epsilon", c.adam.epsilon},
                     {"loss", c.loss},
                     {"schedule", c.schedule},
                     {"seed", c.seed},
                     {"checkpoint_interval", c.checkpoint_interval},
                     {"max_steps", c.max_steps},
                     {"ema_decay", c.ema_decay}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.adam.learning_rate = j.value("learning_rate", d.adam.learning_rate);
  c.adam.beta1 = j.value("adam_beta1", d.adam.beta1);
  c.adam.beta2 = j.value("adam_beta2", d.adam.beta2);
  c.adam.epsilon = j.value("adam_epsilon", d.adam.epsilon);
  c.loss = j.contains("loss") ? j.at("loss").get<RobustLossSpec>() : d.loss;
  c.schedule = j.contains("schedule") ? j.at("schedule").get<ScheduleParams>() : d.schedule;
  c.seed = j.value("seed", d.seed);
  c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.ema_decay = j.value("ema_decay", d.ema_decay);
}

TrainResult train(std::span<const LabeledPatch> dataset, const TrainConfig& config, NoisePredictor& model,
                  const StepObserver& observer) {
  config.validate();
  const NoiseSchedule schedule = NoiseSchedule::from_params(config.schedule);

  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].split == Split::kTrain) train_idx.push_back(i);
  }
  if (train_idx.empty()) throw std::invalid_argument("train: dataset has no train-split patches");
  for (std::size_t i : train_idx) {
    if (dataset[i].image.shape() != model.shape()) throw std::invalid_argument("train: patch shape mismatch");
  }

  Rng rng = Rng(config.seed).split("train");
  AdamState adam(model.parameter_count());
  TrainResult result;
  std::vector<NoisySample> batch;
  const bool use_ema = config.ema_decay > 0.0;
  std::vector<double> ema;
  if (use_ema) ema.assign(model.parameters().begin(), model.parameters().end());

  auto snapshot = [&] {
    if (!use_ema) return std::vector<float>(model.parameters().begin(), model.parameters().end());
    return std::vector<float>(ema.begin(), ema.end());
  };
  auto finish = [&] {
    if (use_ema) std::copy(ema.begin(), ema.end(), model.parameters().begin());
    return result;
  };
  auto write_checkpoint = [&](int epoch) {
    Checkpoint ck{model.describe(), config, epoch, result.history, snapshot()};
    std::ostringstream name;
    name << "step_" << std::setw(8) << std::setfill('0') << result.steps << ".rdpm";
    save_checkpoint(config.checkpoint_dir / name.str(), ck);
  };

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    shuffle<std::size_t>(order, rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t k = start; k < end; ++k) {
        const int t = rng.uniform_int(1, schedule.steps());
        batch.push_back(forward_noise(dataset[order[k]].image, t, schedule, rng));
      }

      LossResult lr;
      const std::vector<float> grad = loss_gradient<float>(model, batch, config.loss, &lr);
      if (!std::isfinite(lr.loss)) {
        std::ostringstream msg;
        msg << "training diverged at step " << result.steps + 1 << " (loss " << config.loss.label()
            << " = " << lr.loss << ", t =";
        for (const NoisySample& s : batch) msg << ' ' << s.t;
        msg << ")";
        throw TrainingDiverged(msg.str());
      }
      if (observer) observer(StepInfo{result.steps + 1, epoch, batch, lr, grad, model});
      optimizer_step(model.parameters(), grad, adam, config.adam);
      if (use_ema) {
        const std::span<const float> theta = model.parameters();
        for (std::size_t i = 0; i < ema.size(); ++i) ema[i] = config.ema_decay * ema[i] + (1.0 - config.ema_decay) * theta[i];
      }
      ++result.steps;
      result.history.push_back(LossRecord{result.steps, epoch, lr.loss, lr.selected.size()});

      if (config.checkpoint_interval > 0 && result.steps % config.checkpoint_interval == 0) {
        write_checkpoint(epoch);
      }
      if (config.max_steps > 0 && result.steps >= config.max_steps) return finish();
    }
  }
  return finish();
}

namespace {

constexpr char kCheckpointMagic[4] = {'R', 'D', 'P', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian hosts");

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json meta;
  meta["model"] = ck.model;
  meta["config"] = ck.config;
  meta["schedule"] = {ck.config.schedule.steps, ck.config.schedule.beta_start, ck.config.schedule.beta_end};
  meta["epoch"] = ck.epoch;
  nlohmann::json steps = nlohmann::json::array(), epochs = nlohmann::json::array(),
                 losses = nlohmann::json::array(), kept = nlohmann::json::array();
  for (const LossRecord& r : ck.history) {
    steps.push_back(r.step);
    epochs.push_back(r.epoch);
    losses.push_back(r.loss);
    kept.push_back(r.kept_samples);
  }
  meta["history"] = {{"step", steps}, {"epoch", epochs}, {"loss", losses}, {"kept_samples", kept}};
  const std::string text = meta.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint64_t>(out, ck.parameters.size());
  out.write(reinterpret_cast<const char*>(ck.parameters.data()),
            static_cast<std::streamsize>(ck.parameters.size() * sizeof(float)));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  const auto len = get<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const nlohmann::json meta = nlohmann::json::parse(text);

  Checkpoint ck;
  ck.model = meta.at("model");
  ck.config = meta.at("config").get<TrainConfig>();
  ck.epoch = meta.at("epoch").get<int>();
  const auto& h = meta.at("history");
  for (std::size_t i = 0; i < h.at("step").size(); ++i) {
    ck.history.push_back(LossRecord{h["step"][i].get<std::int64_t>(), h["epoch"][i].get<int>(),
                                    h["loss"][i].get<double>(), h["kept_samples"][i].get<std::size_t>()});
  }
  const auto count = get<std::uint64_t>(in);
  ck.parameters.resize(count);
  in.read(reinterpret_cast<char*>(ck.parameters.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw std::runtime_error("checkpoint truncated: " + path.string());
  return ck;
}

std::unique_ptr<NoisePredictor> restore_model(const Checkpoint& checkpoint) {
  auto model = make_predictor(checkpoint.model);
  if (model->parameter_count() != checkpoint.parameters.size()) {
    throw std::runtime_error("checkpoint parameter count does not match the architecture");
  }
  std::copy(checkpoint.parameters.begin(), checkpoint.parameters.end(), model->parameters().begin());
  return model;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,epoch,loss,kept_samples\n" << std::setprecision(17);
  for (const LossRecord& r : history) {
    out << r.step << ',' << r.epoch << ',' << r.loss << ',' << r.kept_samples << '\n';
  }
}

std::uint64_t parameter_checksum(std::span<const float> parameters) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(parameters.data());
  for (std::size_t i = 0; i < parameters.size() * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace rddpm
