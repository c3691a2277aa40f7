#include <gtest/gtest.h>

#include <cmath>

#include "rddpm/schedule.hpp"

using namespace rddpm;

namespace {

// Independent product loop.
double naive_alpha_bar(const NoiseSchedule& s, int t) {
  double p = 1.0;
  for (int i = 1; i <= t; ++i) p *= 1.0 - s.beta(i);
  return p;
}

}  // namespace

TEST(Schedule, LinearEndpoints) {
  const auto s = NoiseSchedule::linear(1000, 0.001, 0.02);
  EXPECT_DOUBLE_EQ(s.beta(1), 0.001);
  EXPECT_DOUBLE_EQ(s.beta(1000), 0.02);
  EXPECT_NEAR(s.beta(500), 0.001 + 499.0 / 999.0 * 0.019, 1e-15);
  const auto one = NoiseSchedule::linear(1, 0.001, 0.001);
  EXPECT_DOUBLE_EQ(one.alpha_bar(1), 0.999);
}

TEST(Schedule, DefaultsAreDeskScale) {
  const auto s = NoiseSchedule::from_params(ScheduleParams{});
  EXPECT_EQ(s.steps(), 200);
  EXPECT_DOUBLE_EQ(s.beta(1), 0.001);
  EXPECT_DOUBLE_EQ(s.beta(200), 0.02);
  EXPECT_DOUBLE_EQ(s.sigma(7), std::sqrt(s.beta(7)));
}

TEST(Schedule, AlphaBarRecurrenceAndProduct) {
  for (int T : {1, 2, 200, 1000}) {
    const auto s = NoiseSchedule::linear(T, 0.001, 0.02);
    EXPECT_DOUBLE_EQ(s.alpha_bar(1), 1.0 - s.beta(1));
    for (int t = 1; t <= T; ++t) {
      EXPECT_DOUBLE_EQ(s.alpha(t), 1.0 - s.beta(t));
      if (t >= 2) ASSERT_LE(std::abs(s.alpha_bar(t) - s.alpha(t) * s.alpha_bar(t - 1)), 1e-12);
      ASSERT_LE(std::abs(s.alpha_bar(t) - naive_alpha_bar(s, t)) / naive_alpha_bar(s, t), 1e-12);
      const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
      ASSERT_NEAR(a * a + b * b, 1.0, 1e-12);
      if (t >= 2) ASSERT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
      if (t >= 2) ASSERT_GE(s.beta(t), s.beta(t - 1));
    }
    EXPECT_GT(s.alpha_bar(T), 0.0);
    EXPECT_LT(s.alpha_bar(T), 1.0);
  }
}

TEST(Schedule, RejectsBadArguments) {
  EXPECT_THROW(NoiseSchedule::linear(0, 0.001, 0.02), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.0, 0.02), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.02, 0.001), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.001, 1.0), std::invalid_argument);
  const auto s = NoiseSchedule::linear(10, 0.001, 0.02);
  EXPECT_THROW(s.beta(0), std::out_of_range);
  EXPECT_THROW(s.alpha_bar(11), std::out_of_range);
}

TEST(Schedule, StepForFraction) {
  EXPECT_EQ(NoiseSchedule::linear(1000, 0.001, 0.02).step_for_fraction(0.25), 250);
  const auto s = NoiseSchedule::linear(200, 0.001, 0.02);
  EXPECT_EQ(s.step_for_fraction(0.25), 50);
  EXPECT_EQ(s.step_for_fraction(1.0), 200);
  EXPECT_EQ(s.step_for_fraction(1e-6), 1);
  EXPECT_THROW(s.step_for_fraction(0.0), std::invalid_argument);
  EXPECT_THROW(s.step_for_fraction(1.5), std::invalid_argument);
}

TEST(Schedule, SigmaRules) {
  const auto post = NoiseSchedule::linear(50, 0.001, 0.02, SigmaRule::kPosterior);
  for (int t = 2; t <= 50; ++t) {
    const double want = post.beta(t) * (1.0 - post.alpha_bar(t - 1)) / (1.0 - post.alpha_bar(t));
    EXPECT_NEAR(post.sigma(t) * post.sigma(t), want, 1e-15);
  }
  const auto zero = NoiseSchedule::linear(50, 0.001, 0.02, SigmaRule::kZero);
  for (double v : zero.sigmas()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(sigma_rule_from_string(to_string(SigmaRule::kPosterior)), SigmaRule::kPosterior);
}

TEST(Schedule, ParamsJsonRoundTrip) {
  ScheduleParams p{1000, 1e-4, 0.02, SigmaRule::kPosterior};
  const nlohmann::json j = p;
  EXPECT_EQ(j.get<ScheduleParams>(), p);
}
