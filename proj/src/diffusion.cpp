#include "rddpm/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace rddpm {

NoisySample forward_noise(const ImageTensor& x0, int t, const NoiseSchedule& schedule, Rng& rng) {
  schedule.alpha_bar(t);  // range check before drawing
  return forward_noise_with(x0, t, schedule, gaussian_like(x0.shape(), rng));
}

NoisySample forward_noise_with(const ImageTensor& x0, int t, const NoiseSchedule& schedule,
                               ImageTensor eps) {
  if (eps.shape() != x0.shape()) throw std::invalid_argument("forward_noise: eps shape mismatch");
  const double abar = schedule.alpha_bar(t);
  const double signal = std::sqrt(abar);
  const double noise = std::sqrt(1.0 - abar);
  ImageTensor x_t(x0.shape());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    x_t[i] = static_cast<float>(signal * x0[i] + noise * eps[i]);
  }
  return NoisySample{std::move(x_t), std::move(eps), t};
}

ImageTensor reverse_step_with(const ImageTensor& x_t, int t, const ImageTensor& eps_pred,
                              const NoiseSchedule& schedule, const ImageTensor& z) {
  if (eps_pred.shape() != x_t.shape()) throw std::invalid_argument("reverse_step: shape mismatch");
  const double alpha = schedule.alpha(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double eps_coef = (1.0 - alpha) / std::sqrt(1.0 - schedule.alpha_bar(t));
  const double sigma = t > 1 ? schedule.sigma(t) : 0.0;
  if (sigma != 0.0 && z.shape() != x_t.shape()) {
    throw std::invalid_argument("reverse_step: z shape mismatch");
  }
  ImageTensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = inv_sqrt_alpha * (x_t[i] - eps_coef * eps_pred[i]);
    if (sigma != 0.0) v += sigma * z[i];
    out[i] = static_cast<float>(v);
  }
  return out;
}

ImageTensor reverse_step(const ImageTensor& x_t, int t, const NoisePredictor& model,
                         const NoiseSchedule& schedule, Rng& rng) {
  const ImageTensor eps_pred = predict(model, x_t, t);
  if (t > 1) return reverse_step_with(x_t, t, eps_pred, schedule, gaussian_like(x_t.shape(), rng));
  return reverse_step_with(x_t, t, eps_pred, schedule, ImageTensor{});
}

ImageTensor denoise_from(ImageTensor start, int t_start, const NoisePredictor& model,
                         const NoiseSchedule& schedule, Rng& rng) {
  if (t_start < 1 || t_start > schedule.steps()) throw std::out_of_range("denoise_from: bad start step");
  for (int t = t_start; t >= 1; --t) start = reverse_step(start, t, model, schedule, rng);
  return start;
}

ImageTensor sample(const NoisePredictor& model, const NoiseSchedule& schedule, const Shape& shape,
                   Rng& rng) {
  ImageTensor x = gaussian_like(shape, rng);
  return denoise_from(std::move(x), schedule.steps(), model, schedule, rng);
}

ImageTensor reconstruct(const ImageTensor& x_in, double noising_fraction, const NoisePredictor& model,
                        const NoiseSchedule& schedule, Rng& rng) {
  const int t_star = schedule.step_for_fraction(noising_fraction);
  NoisySample noisy = forward_noise(x_in, t_star, schedule, rng);
  return denoise_from(std::move(noisy.x_t), t_star, model, schedule, rng);
}

}  // namespace rddpm
