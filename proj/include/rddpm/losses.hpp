#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rddpm/diffusion.hpp"
#include "rddpm/model.hpp"

namespace rddpm {

enum class LossKind {
  kL2,     // mean squared residual
  kHuber,  // elementwise Huber_delta, averaged
  kL1,     // mean absolute residual (the delta -> 0 end of the Huber family)
  kLts,    // least trimmed squares over whole samples
};

/// Training loss choice. delta is read only for Huber, lambda only for LTS.
struct RobustLossSpec {
  LossKind kind = LossKind::kL2;
  double delta = 0.2;
  double lambda = 1.0;

  static RobustLossSpec l2() { return {LossKind::kL2, 0.2, 1.0}; }
  static RobustLossSpec huber(double delta) { return {LossKind::kHuber, delta, 1.0}; }
  static RobustLossSpec l1() { return {LossKind::kL1, 0.0, 1.0}; }
  static RobustLossSpec lts(double lambda) { return {LossKind::kLts, 0.2, lambda}; }

  void validate() const;
  /// Short label such as "l2", "huber(0.2)", "lts(0.8)".
  std::string label() const;

  bool operator==(const RobustLossSpec&) const = default;
};

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

/// Serialised under the keys kind / delta / lambda (loss.kind, loss.delta,
/// loss.lambda in a config file).
void to_json(nlohmann::json& j, const RobustLossSpec& spec);
void from_json(const nlohmann::json& j, RobustLossSpec& spec);

/// r_i = eps_i - eps_theta(x_{t_i}, t_i) per sample, plus each sample's mean
/// squared residual used for trimming.
struct BatchResiduals {
  std::vector<std::vector<double>> per_element;
  std::vector<double> per_sample_score;

  std::size_t batch_size() const { return per_element.size(); }
};

/// Residuals from precomputed predictions (one vector per sample).
template <class Scalar>
BatchResiduals residuals_from(std::span<const NoisySample> batch,
                              std::span<const std::vector<Scalar>> predictions);

/// One forward pass per sample.
template <class Scalar>
BatchResiduals residuals(std::span<const NoisySample> batch, const BasicNoisePredictor<Scalar>& model);

/// Loss value and its gradient with respect to each sample's prediction.
struct LossResult {
  double loss = 0.0;
  std::vector<std::vector<double>> grad;
  std::vector<std::size_t> selected;  // samples contributing; all of them unless trimmed
};

LossResult l2_loss(const BatchResiduals& res);
LossResult huber_loss(const BatchResiduals& res, double delta);
LossResult l1_loss(const BatchResiduals& res);

/// Indices of the s = max(1, floor(lambda * B)) smallest scores, ascending by
/// index; ties go to the lower index.
std::vector<std::size_t> lts_select(const BatchResiduals& res, double lambda);

/// L2 over the selected samples only; unselected samples get exactly zero
/// gradient.
LossResult lts_loss(const BatchResiduals& res, double lambda);

/// L2 over a caller-fixed subset of samples.
LossResult l2_loss_on(const BatchResiduals& res, std::span<const std::size_t> subset);

LossResult compute_loss(const BatchResiduals& res, const RobustLossSpec& spec);

/// Scalar Huber function.
double huber(double r, double delta);

}  // namespace rddpm
