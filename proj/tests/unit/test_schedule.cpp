#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "lapflow/error.hpp"
#include "lapflow/schedule.hpp"

using namespace lapflow;

namespace {

const PathKind kPaths[] = {PathKind::linear, PathKind::gvp, PathKind::poly2, PathKind::poly3};

ScheduleSpec three_scale(PathKind path) {
  ScheduleSpec s;
  s.scales = 3;
  s.critical_times = {0.67, 0.33};
  s.path = path;
  return s;
}

}  // namespace

TEST(ScheduleSpec, UniformDefaults) {
  EXPECT_EQ(ScheduleSpec::uniform(1).critical_times, std::vector<double>{});
  EXPECT_EQ(ScheduleSpec::uniform(2).critical_times, std::vector<double>{0.5});
  auto s3 = ScheduleSpec::uniform(3);
  ASSERT_EQ(s3.critical_times.size(), 2u);
  EXPECT_DOUBLE_EQ(s3.critical_times[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s3.critical_times[1], 1.0 / 3.0);
  EXPECT_EQ(s3.critical(0), 1.0);
  EXPECT_EQ(s3.critical(3), 0.0);
}

TEST(ScheduleSpec, ValidateRejectsBadOrdering) {
  ScheduleSpec s = three_scale(PathKind::linear);
  EXPECT_NO_THROW(s.validate());
  s.critical_times = {0.33, 0.67};
  EXPECT_THROW(s.validate(), ConfigError);
  s.critical_times = {1.0, 0.5};
  EXPECT_THROW(s.validate(), ConfigError);
  s.critical_times = {0.5};
  EXPECT_THROW(s.validate(), ConfigError);
  try {
    s.validate();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "schedule.critical_times");
  }
}

TEST(Coeffs, LinearSubstitution) {
  ScheduleSpec s;
  s.scales = 2;
  s.critical_times = {0.5};
  auto c = coeffs(s, 0, 0.75);
  EXPECT_DOUBLE_EQ(c.alpha, 0.5);
  EXPECT_DOUBLE_EQ(c.sigma, 0.25);
  EXPECT_DOUBLE_EQ(c.dalpha, 2.0);
  EXPECT_DOUBLE_EQ(c.dsigma, -1.0);
}

TEST(Coeffs, BoundariesForEveryPath) {
  for (PathKind path : kPaths) {
    for (std::size_t K = 1; K <= 4; ++K) {
      auto s = ScheduleSpec::uniform(K, path);
      for (std::size_t k = 0; k < K; ++k) {
        EXPECT_LE(std::abs(coeffs(s, k, s.start(k)).alpha), 1e-12);
        auto end = coeffs(s, k, 1.0);
        EXPECT_LE(std::abs(end.alpha - 1.0), 1e-12);
        EXPECT_LE(std::abs(end.sigma), 1e-12);
      }
    }
  }
}

TEST(Coeffs, BelowActivationIsDomainError) {
  auto s = three_scale(PathKind::linear);
  EXPECT_THROW(coeffs(s, 0, 0.5), DomainError);
  EXPECT_NO_THROW(coeffs(s, 2, 0.0));
  EXPECT_THROW(coeffs(s, 3, 0.9), DomainError);
}

TEST(Coeffs, DerivativesMatchFiniteDifferences) {
  const double h = 1e-6;
  for (PathKind path : kPaths) {
    auto s = three_scale(path);
    for (std::size_t k = 0; k < 3; ++k) {
      for (double u : {0.1, 0.35, 0.6, 0.9}) {
        double t = s.start(k) + u * (1.0 - s.start(k));
        auto c = coeffs(s, k, t);
        auto hi = coeffs(s, k, t + h), lo = coeffs(s, k, t - h);
        double fa = (hi.alpha - lo.alpha) / (2 * h);
        double fs = (hi.sigma - lo.sigma) / (2 * h);
        EXPECT_LE(std::abs(fa - c.dalpha) / std::max(1.0, std::abs(c.dalpha)), 1e-4);
        EXPECT_LE(std::abs(fs - c.dsigma) / std::max(1.0, std::abs(c.dsigma)), 1e-4);
      }
    }
  }
}

TEST(NoisyState, Endpoints) {
  auto s = three_scale(PathKind::linear);
  Tensor<double> x1({4}, {1, 2, 3, 4}), x0({4}, {-1, 0.5, 2, -3});
  EXPECT_EQ(noisy_state(x1, x0, coeffs(s, 1, 1.0)), x1);
  auto start = noisy_state(x1, x0, coeffs(s, 1, 0.33));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(start[i], 0.67 * x0[i], 1e-15);
}

TEST(NoisyState, ScalarSubstitution) {
  ScheduleSpec s = ScheduleSpec::uniform(2);
  auto x = noisy_state(Tensor<double>({1}, {2.0}), Tensor<double>({1}, {4.0}), coeffs(s, 0, 0.75));
  EXPECT_DOUBLE_EQ(x[0], 2.0);
  EXPECT_THROW(noisy_state(Tensor<double>({1}), Tensor<double>({2}), coeffs(s, 0, 0.75)),
               DimensionError);
}

TEST(VelocityTarget, RectifiedFlowAndScalar) {
  ScheduleSpec one = ScheduleSpec::uniform(1);
  Tensor<double> x1({2}, {3, -1}), x0({2}, {0.5, 2});
  EXPECT_EQ(velocity_target(x1, x0, coeffs(one, 0, 0.3)), x1 - x0);
  ScheduleSpec two = ScheduleSpec::uniform(2);
  for (double t : {0.5, 0.6, 1.0}) {
    auto u = velocity_target(Tensor<double>({1}, {1.0}), Tensor<double>({1}, {1.0}),
                             coeffs(two, 0, t));
    EXPECT_DOUBLE_EQ(u[0], 1.0);
  }
}

TEST(VelocityTarget, SingleScaleLinearIsCfmPath) {
  ScheduleSpec one = ScheduleSpec::uniform(1);
  Tensor<double> x1({2}, {3, -1}), x0({2}, {0.5, 2});
  auto xt = noisy_state(x1, x0, coeffs(one, 0, 0.25));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(xt[i], 0.25 * x1[i] + 0.75 * x0[i]);
}

TEST(SampleStageTime, SingleScaleCoversUnitInterval) {
  Rng rng(1);
  auto s = ScheduleSpec::uniform(1);
  double lo = 1, hi = 0;
  for (int i = 0; i < 10000; ++i) {
    auto st = sample_stage_time(rng, s);
    EXPECT_EQ(st.stage, 0u);
    lo = std::min(lo, st.t);
    hi = std::max(hi, st.t);
  }
  EXPECT_LT(lo, 0.01);
  EXPECT_GT(hi, 0.99);
}

TEST(SampleStageTime, FinestStageIsUniformOnItsSegment) {
  Rng rng(2);
  ScheduleSpec s;
  s.scales = 3;
  s.critical_times = {0.67, 0.33};
  std::vector<double> ts;
  std::vector<int> stages(3);
  while (ts.size() < 100000) {
    auto st = sample_stage_time(rng, s);
    stages[st.stage]++;
    EXPECT_GE(st.t, s.start(st.stage));
    EXPECT_LE(st.t, 1.0);
    if (st.stage == 0) ts.push_back(st.t);
  }
  std::sort(ts.begin(), ts.end());
  double d = 0;
  const double n = static_cast<double>(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    double cdf = (ts[i] - 0.67) / 0.33;
    d = std::max({d, std::abs(cdf - i / n), std::abs(cdf - (i + 1) / n)});
  }
  // Kolmogorov-Smirnov critical value at p = 0.01.
  EXPECT_LT(d, 1.628 / std::sqrt(n));
  for (int c : stages) EXPECT_GT(c, 0);
}

TEST(Path, ParseAndPrint) {
  for (PathKind p : kPaths) EXPECT_EQ(parse_path(to_string(p)), p);
  EXPECT_THROW(parse_path("cosine"), ConfigError);
}
