#pragma once

#include <span>
#include <vector>

#include "rddpm/losses.hpp"
#include "rddpm/model.hpp"

namespace rddpm {

/// d(loss)/d(theta) for one batch: forward each sample with a cache, compute
/// the configured loss, then backpropagate every sample in index order so the
/// reduction order is fixed. Optionally returns the loss result.
template <class Scalar>
std::vector<Scalar> loss_gradient(const BasicNoisePredictor<Scalar>& model,
                                  std::span<const NoisySample> batch, const RobustLossSpec& loss,
                                  LossResult* result = nullptr);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::vector<std::size_t> selected;  // samples the loss kept
  /// Sum of |d theta| produced by samples the loss trimmed; exactly 0 when
  /// trimming works.
  double trimmed_contribution = 0.0;
};

/// Compares the analytic parameter gradient with central finite differences on
/// `n_params` randomly chosen parameters. LTS is checked on the selection made
/// at the unperturbed parameters. Relative error is |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(BasicNoisePredictor<double>& model, std::span<const NoisySample> batch,
                           const RobustLossSpec& loss, Rng& rng, std::size_t n_params = 100,
                           double step = 1e-4);

}  // namespace rddpm
