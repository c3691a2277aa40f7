#include "rddpm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rddpm {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kL2: return "l2";
    case LossKind::kHuber: return "huber";
    case LossKind::kL1: return "l1";
    case LossKind::kLts: return "lts";
  }
  return "l2";
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "l2" || name == "ddpm") return LossKind::kL2;
  if (name == "huber") return LossKind::kHuber;
  if (name == "l1") return LossKind::kL1;
  if (name == "lts") return LossKind::kLts;
  throw std::invalid_argument("unknown loss kind: " + name);
}

void RobustLossSpec::validate() const {
  if (kind == LossKind::kHuber && !(delta > 0.0)) {
    throw std::invalid_argument("Huber loss needs delta > 0 (use the l1 loss for delta = 0)");
  }
  if (kind == LossKind::kLts && !(lambda > 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("LTS loss needs 0 < lambda <= 1");
  }
}

std::string RobustLossSpec::label() const {
  std::ostringstream out;
  out << to_string(kind);
  if (kind == LossKind::kHuber) out << "(" << delta << ")";
  if (kind == LossKind::kLts) out << "(" << lambda << ")";
  return out.str();
}

void to_json(nlohmann::json& j, const RobustLossSpec& spec) {
  j = nlohmann::json{{"kind", to_string(spec.kind)}};
  if (spec.kind == LossKind::kHuber) j["delta"] = spec.delta;
  if (spec.kind == LossKind::kLts) j["lambda"] = spec.lambda;
}

void from_json(const nlohmann::json& j, RobustLossSpec& spec) {
  spec = RobustLossSpec{};
  spec.kind = loss_kind_from_string(j.at("kind").get<std::string>());
  spec.delta = j.value("delta", 0.2);
  spec.lambda = j.value("lambda", 1.0);
  if (spec.kind == LossKind::kHuber && spec.delta == 0.0) spec.kind = LossKind::kL1;
  spec.validate();
}

template <class Scalar>
BatchResiduals residuals_from(std::span<const NoisySample> batch,
                              std::span<const std::vector<Scalar>> predictions) {
  if (batch.empty()) throw std::invalid_argument("residuals: empty batch");
  if (predictions.size() != batch.size()) throw std::invalid_argument("residuals: prediction count");
  BatchResiduals res;
  res.per_element.resize(batch.size());
  res.per_sample_score.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const ImageTensor& eps = batch[i].eps;
    const std::vector<Scalar>& pred = predictions[i];
    if (pred.size() != eps.size()) throw std::invalid_argument("residuals: prediction size");
    std::vector<double>& r = res.per_element[i];
    r.resize(eps.size());
    double sq = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] = static_cast<double>(eps[j]) - static_cast<double>(pred[j]);
      sq += r[j] * r[j];
    }
    res.per_sample_score[i] = sq / static_cast<double>(r.size());
  }
  return res;
}

template <class Scalar>
BatchResiduals residuals(std::span<const NoisySample> batch, const BasicNoisePredictor<Scalar>& model) {
  std::vector<std::vector<Scalar>> predictions(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    predictions[i].resize(model.shape().size());
    model.forward(batch[i].x_t, batch[i].t, predictions[i], nullptr);
  }
  return residuals_from<Scalar>(batch, predictions);
}

template BatchResiduals residuals_from<float>(std::span<const NoisySample>,
                                              std::span<const std::vector<float>>);
template BatchResiduals residuals_from<double>(std::span<const NoisySample>,
                                               std::span<const std::vector<double>>);
template BatchResiduals residuals<float>(std::span<const NoisySample>, const BasicNoisePredictor<float>&);
template BatchResiduals residuals<double>(std::span<const NoisySample>, const BasicNoisePredictor<double>&);

namespace {

std::size_t element_count(const BatchResiduals& res, std::span<const std::size_t> subset) {
  std::size_t n = 0;
  for (std::size_t i : subset) n += res.per_element[i].size();
  return n;
}

LossResult zero_result(const BatchResiduals& res) {
  LossResult out;
  out.grad.resize(res.batch_size());
  for (std::size_t i = 0; i < res.batch_size(); ++i) out.grad[i].assign(res.per_element[i].size(), 0.0);
  return out;
}

std::vector<std::size_t> all_indices(const BatchResiduals& res) {
  std::vector<std::size_t> idx(res.batch_size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

// Elementwise loss averaged over the subset's elements. `value` and `slope`
// give the per-element loss and its derivative with respect to r.
template <class Value, class Slope>
LossResult elementwise(const BatchResiduals& res, std::span<const std::size_t> subset, Value value,
                       Slope slope) {
  if (res.batch_size() == 0) throw std::invalid_argument("loss: empty batch");
  LossResult out = zero_result(res);
  const double n = static_cast<double>(element_count(res, subset));
  double total = 0.0;
  for (std::size_t i : subset) {
    const std::vector<double>& r = res.per_element[i];
    std::vector<double>& g = out.grad[i];
    for (std::size_t j = 0; j < r.size(); ++j) {
      total += value(r[j]);
      // d/d(prediction) = -d/dr since r = target - prediction.
      g[j] = -slope(r[j]) / n;
    }
  }
  out.loss = total / n;
  out.selected.assign(subset.begin(), subset.end());
  return out;
}

}  // namespace

double huber(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

LossResult l2_loss_on(const BatchResiduals& res, std::span<const std::size_t> subset) {
  for (std::size_t i : subset) {
    if (i >= res.batch_size()) throw std::out_of_range("l2_loss_on: index outside batch");
  }
  return elementwise(
      res, subset, [](double r) { return r * r; }, [](double r) { return 2.0 * r; });
}

LossResult l2_loss(const BatchResiduals& res) { return l2_loss_on(res, all_indices(res)); }

LossResult huber_loss(const BatchResiduals& res, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("huber_loss: delta must be positive");
  return elementwise(
      res, all_indices(res), [delta](double r) { return huber(r, delta); },
      [delta](double r) { return std::abs(r) <= delta ? r : (r > 0 ? delta : -delta); });
}

LossResult l1_loss(const BatchResiduals& res) {
  return elementwise(
      res, all_indices(res), [](double r) { return std::abs(r); },
      [](double r) { return static_cast<double>((r > 0) - (r < 0)); });
}

std::vector<std::size_t> lts_select(const BatchResiduals& res, double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) throw std::invalid_argument("lts_select: lambda outside (0, 1]");
  const std::size_t batch = res.batch_size();
  if (batch == 0) throw std::invalid_argument("lts_select: empty batch");
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(lambda * batch)));
  std::vector<std::size_t> order = all_indices(res);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return res.per_sample_score[a] < res.per_sample_score[b];
  });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

LossResult lts_loss(const BatchResiduals& res, double lambda) {
  const std::vector<std::size_t> subset = lts_select(res, lambda);
  return l2_loss_on(res, subset);
}

LossResult compute_loss(const BatchResiduals& res, const RobustLossSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case LossKind::kL2: return l2_loss(res);
    case LossKind::kHuber: return huber_loss(res, spec.delta);
    case LossKind::kL1: return l1_loss(res);
    case LossKind::kLts: return lts_loss(res, spec.lambda);
  }
  throw std::logic_error("compute_loss: unhandled loss kind");
}

}  // namespace rddpm
