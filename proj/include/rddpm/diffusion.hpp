#pragma once

#include "rddpm/core.hpp"
#include "rddpm/model.hpp"
#include "rddpm/schedule.hpp"

namespace rddpm {

/// x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps, together with the eps that
/// produced it (the regression target).
struct NoisySample {
  ImageTensor x_t;
  ImageTensor eps;
  int t = 1;
};

/// Closed-form forward noising with a freshly drawn eps.
NoisySample forward_noise(const ImageTensor& x0, int t, const NoiseSchedule& schedule, Rng& rng);

/// Same, with caller-supplied eps.
NoisySample forward_noise_with(const ImageTensor& x0, int t, const NoiseSchedule& schedule,
                               ImageTensor eps);

/// One ancestral step x_t -> x_{t-1} given an explicit noise prediction and
/// reverse noise z (ignored at t = 1).
ImageTensor reverse_step_with(const ImageTensor& x_t, int t, const ImageTensor& eps_pred,
                              const NoiseSchedule& schedule, const ImageTensor& z);

/// One ancestral step using the model; draws z only when t > 1.
ImageTensor reverse_step(const ImageTensor& x_t, int t, const NoisePredictor& model,
                         const NoiseSchedule& schedule, Rng& rng);

/// Runs the reverse chain from `start` at step t_start down to x_0.
ImageTensor denoise_from(ImageTensor start, int t_start, const NoisePredictor& model,
                         const NoiseSchedule& schedule, Rng& rng);

/// Unconditional sample: x_T ~ N(0, I), then T reverse steps.
ImageTensor sample(const NoisePredictor& model, const NoiseSchedule& schedule, const Shape& shape,
                   Rng& rng);

/// Partial-chain reconstruction: noise x_in to t* = round(fraction * T), then
/// denoise back to x_0.
ImageTensor reconstruct(const ImageTensor& x_in, double noising_fraction, const NoisePredictor& model,
                        const NoiseSchedule& schedule, Rng& rng);

}  // namespace rddpm
