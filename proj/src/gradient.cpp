#include "rddpm/gradient.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <typeindex>
#include <typeinfo>

namespace rddpm {

template <class Scalar>
std::vector<Scalar> loss_gradient(const BasicNoisePredictor<Scalar>& model,
                                  std::span<const NoisySample> batch, const RobustLossSpec& loss,
                                  LossResult* result) {
  const std::size_t n_out = model.shape().size();
  // Caches are kept per thread so repeated steps do not reallocate the
  // (large) im2col buffers. They are rebuilt when the model type changes.
  thread_local std::vector<std::unique_ptr<ActivationCache>> caches;
  thread_local std::type_index cache_type = typeid(void);
  if (cache_type != std::type_index(typeid(model))) {
    caches.clear();
    cache_type = typeid(model);
  }
  while (caches.size() < batch.size()) caches.push_back(model.make_cache());
  std::vector<std::vector<Scalar>> predictions(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    predictions[i].resize(n_out);
    model.forward(batch[i].x_t, batch[i].t, predictions[i], caches[i].get());
  }
  const BatchResiduals res = residuals_from<Scalar>(batch, predictions);
  LossResult lr = compute_loss(res, loss);

  std::vector<Scalar> grad(model.parameter_count(), Scalar(0));
  std::vector<Scalar> upstream(n_out);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    bool any = false;
    for (std::size_t j = 0; j < n_out; ++j) {
      upstream[j] = static_cast<Scalar>(lr.grad[i][j]);
      any = any || upstream[j] != Scalar(0);
    }
    // A trimmed sample has an all-zero upstream and adds nothing.
    if (any) model.backward(*caches[i], upstream, grad);
  }
  if (result) *result = std::move(lr);
  return grad;
}

template std::vector<float> loss_gradient<float>(const BasicNoisePredictor<float>&,
                                                 std::span<const NoisySample>, const RobustLossSpec&,
                                                 LossResult*);
template std::vector<double> loss_gradient<double>(const BasicNoisePredictor<double>&,
                                                   std::span<const NoisySample>,
                                                   const RobustLossSpec&, LossResult*);

GradCheckReport grad_check(BasicNoisePredictor<double>& model, std::span<const NoisySample> batch,
                           const RobustLossSpec& loss, Rng& rng, std::size_t n_params, double step) {
  if (batch.empty()) throw std::invalid_argument("grad_check: empty batch");
  LossResult base;
  const std::vector<double> analytic = loss_gradient<double>(model, batch, loss, &base);

  GradCheckReport report;
  report.selected = base.selected;

  // Trimmed samples: run their backward explicitly and measure what they add.
  const std::size_t n_out = model.shape().size();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (std::find(base.selected.begin(), base.selected.end(), i) != base.selected.end()) continue;
    auto cache = model.make_cache();
    std::vector<double> out(n_out);
    model.forward(batch[i].x_t, batch[i].t, out, cache.get());
    std::vector<double> contribution(model.parameter_count(), 0.0);
    model.backward(*cache, base.grad[i], contribution);
    for (double v : contribution) report.trimmed_contribution += std::abs(v);
  }

  auto evaluate = [&]() {
    const BatchResiduals res = residuals<double>(batch, model);
    if (loss.kind == LossKind::kLts) return l2_loss_on(res, base.selected).loss;
    return compute_loss(res, loss).loss;
  };

  std::span<double> theta = model.parameters();
  const std::size_t count = std::min(n_params, theta.size());
  const std::vector<std::size_t> chosen = sample_without_replacement(theta.size(), count, rng);
  for (std::size_t p : chosen) {
    const double saved = theta[p];
    theta[p] = saved + step;
    const double plus = evaluate();
    theta[p] = saved - step;
    const double minus = evaluate();
    theta[p] = saved;
    const double numeric = (plus - minus) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[p]), std::abs(numeric), 1e-8});
    report.max_relative_error = std::max(report.max_relative_error, std::abs(analytic[p] - numeric) / denom);
  }
  report.checked = count;
  return report;
}

}  // namespace rddpm
