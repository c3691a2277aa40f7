#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <memory>
#include <vector>

#include "rddpm/core.hpp"
#include "rddpm/model.hpp"
#include "rddpm/schedule.hpp"

namespace rddpm::support {

struct NoCache : ActivationCache {};

// Parameter-free predictor built from a lambda; gradients are not supported.
class FunctionPredictor final : public NoisePredictor {
 public:
  using Fn = std::function<void(const ImageTensor&, int, std::span<float>)>;
  FunctionPredictor(Shape shape, Fn fn) : shape_(shape), fn_(std::move(fn)) {}

  Shape shape() const override { return shape_; }
  std::span<float> parameters() override { return {}; }
  std::span<const float> parameters() const override { return {}; }
  std::unique_ptr<ActivationCache> make_cache() const override { return std::make_unique<NoCache>(); }
  void forward(const ImageTensor& x_t, int t, std::span<float> out, ActivationCache*) const override {
    fn_(x_t, t, out);
  }
  void backward(const ActivationCache&, std::span<const float>, std::span<float>) const override {}
  nlohmann::json describe() const override { return {{"type", "function"}}; }

 private:
  Shape shape_;
  Fn fn_;
};

// Bayes-optimal eps predictor when every pixel of x_0 is i.i.d. N(mu, s^2):
// E[eps | x_t] = b (x_t - a mu) / (a^2 s^2 + b^2), a = sqrt(abar), b = sqrt(1 - abar).
inline FunctionPredictor gaussian_oracle(Shape shape, const NoiseSchedule& schedule, double mu, double s) {
  return FunctionPredictor(shape, [&schedule, mu, s](const ImageTensor& x, int t, std::span<float> out) {
    const double a = std::sqrt(schedule.alpha_bar(t));
    const double b = std::sqrt(1.0 - schedule.alpha_bar(t));
    const double denom = a * a * s * s + b * b;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(b * (x[i] - a * mu) / denom);
  });
}

inline ImageTensor random_image(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  ImageTensor x(shape);
  for (float& v : x.data()) v = static_cast<float>(lo + (hi - lo) * rng.uniform());
  return x;
}

// Pairwise definition: P(s_pos > s_neg) + 0.5 P(tie). O(n^2).
inline double auroc_pairs(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      pairs += 1.0;
    }
  }
  return wins / pairs;
}

// Walk every distinct threshold from high to low, classify s >= tau as
// positive, and accumulate precision times the recall gained.
inline double auprc_thresholds(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  std::set<double, std::greater<>> taus(s.begin(), s.end());
  double pos = 0.0;
  for (auto v : y) pos += v;
  double prev_recall = 0.0, ap = 0.0;
  for (double tau : taus) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= tau) (y[i] ? tp : fp) += 1.0;
    }
    const double recall = tp / pos;
    ap += (recall - prev_recall) * tp / (tp + fp);
    prev_recall = recall;
  }
  return ap;
}

// Sort oracle for trimming: order by (score, index), keep the first
// max(1, floor(lambda * B)), return ascending indices.
inline std::vector<std::size_t> lts_oracle(const std::vector<double>& scores, double lambda) {
  std::vector<std::pair<double, std::size_t>> v;
  for (std::size_t i = 0; i < scores.size(); ++i) v.emplace_back(scores[i], i);
  std::sort(v.begin(), v.end());
  const std::size_t s = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(lambda * scores.size())));
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < s; ++k) out.push_back(v[k].second);
  std::sort(out.begin(), out.end());
  return out;
}

// Standard normal CDF.
inline double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace rddpm::support
