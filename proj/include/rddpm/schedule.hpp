#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace rddpm {

/// Reverse-step noise scale choice.
enum class SigmaRule {
  kSqrtBeta,   // sigma_t = sqrt(beta_t)
  kPosterior,  // sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t)
  kZero,       // deterministic reverse chain
};

std::string to_string(SigmaRule rule);
SigmaRule sigma_rule_from_string(const std::string& name);

struct ScheduleParams {
  int steps = 200;
  double beta_start = 1e-3;
  double beta_end = 0.02;
  SigmaRule sigma = SigmaRule::kSqrtBeta;

  bool operator==(const ScheduleParams&) const = default;
};

void to_json(nlohmann::json& j, const ScheduleParams& p);
void from_json(const nlohmann::json& j, ScheduleParams& p);

/// Linear beta schedule with the derived per-step tables. Timesteps are
/// 1-indexed: valid t is 1..steps(). Immutable after construction.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int steps, double beta_start, double beta_end,
                              SigmaRule sigma = SigmaRule::kSqrtBeta);
  static NoiseSchedule from_params(const ScheduleParams& params);

  int steps() const { return params_.steps; }
  const ScheduleParams& params() const { return params_; }

  double beta(int t) const { return betas_[checked(t)]; }
  double alpha(int t) const { return alphas_[checked(t)]; }
  double alpha_bar(int t) const { return alpha_bars_[checked(t)]; }
  double sigma(int t) const { return sigmas_[checked(t)]; }

  /// Zero-based views; element i belongs to timestep i + 1.
  std::span<const double> betas() const { return betas_; }
  std::span<const double> alphas() const { return alphas_; }
  std::span<const double> alpha_bars() const { return alpha_bars_; }
  std::span<const double> sigmas() const { return sigmas_; }

  /// round(fraction * T), at least 1. Requires 0 < fraction <= 1.
  int step_for_fraction(double fraction) const;

 private:
  NoiseSchedule() = default;
  std::size_t checked(int t) const;

  ScheduleParams params_;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> sigmas_;
};

}  // namespace rddpm
