#include "rddpm/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace rddpm {

std::string to_string(SigmaRule rule) {
  switch (rule) {
    case SigmaRule::kSqrtBeta: return "sqrt_beta";
    case SigmaRule::kPosterior: return "posterior";
    case SigmaRule::kZero: return "zero";
  }
  return "sqrt_beta";
}

SigmaRule sigma_rule_from_string(const std::string& name) {
  if (name == "sqrt_beta") return SigmaRule::kSqrtBeta;
  if (name == "posterior") return SigmaRule::kPosterior;
  if (name == "zero") return SigmaRule::kZero;
  throw std::invalid_argument("unknown sigma rule: " + name);
}

void to_json(nlohmann::json& j, const ScheduleParams& p) {
  j = nlohmann::json{{"steps", p.steps},
                     {"beta_start", p.beta_start},
                     {"beta_end", p.beta_end},
                     {"sigma", to_string(p.sigma)}};
}

void from_json(const nlohmann::json& j, ScheduleParams& p) {
  p.steps = j.at("steps").get<int>();
  p.beta_start = j.at("beta_start").get<double>();
  p.beta_end = j.at("beta_end").get<double>();
  p.sigma = sigma_rule_from_string(j.value("sigma", std::string("sqrt_beta")));
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end, SigmaRule sigma) {
  if (steps < 1) throw std::invalid_argument("NoiseSchedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
    throw std::invalid_argument("NoiseSchedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.params_ = ScheduleParams{steps, beta_start, beta_end, sigma};
  s.betas_.resize(steps);
  s.alphas_.resize(steps);
  s.alpha_bars_.resize(steps);
  s.sigmas_.resize(steps);
  double running = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    const double beta = beta_start + frac * (beta_end - beta_start);
    s.betas_[i] = beta;
    s.alphas_[i] = 1.0 - beta;
    running *= s.alphas_[i];
    s.alpha_bars_[i] = running;
  }
  for (int i = 0; i < steps; ++i) {
    switch (sigma) {
      case SigmaRule::kSqrtBeta:
        s.sigmas_[i] = std::sqrt(s.betas_[i]);
        break;
      case SigmaRule::kPosterior: {
        const double prev = i == 0 ? 1.0 : s.alpha_bars_[i - 1];
        s.sigmas_[i] = std::sqrt(s.betas_[i] * (1.0 - prev) / (1.0 - s.alpha_bars_[i]));
        break;
      }
      case SigmaRule::kZero:
        s.sigmas_[i] = 0.0;
        break;
    }
  }
  return s;
}

NoiseSchedule NoiseSchedule::from_params(const ScheduleParams& params) {
  return linear(params.steps, params.beta_start, params.beta_end, params.sigma);
}

std::size_t NoiseSchedule::checked(int t) const {
  if (t < 1 || t > params_.steps) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside 1.." +
                            std::to_string(params_.steps));
  }
  return static_cast<std::size_t>(t - 1);
}

int NoiseSchedule::step_for_fraction(double fraction) const {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw std::invalid_argument("noising fraction must lie in (0, 1]");
  }
  const long t = std::lround(fraction * params_.steps);
  return static_cast<int>(std::max(1L, t));
}

}  // namespace rddpm
