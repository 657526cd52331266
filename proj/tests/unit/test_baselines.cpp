#include <gtest/gtest.h>

#include <cmath>

#include "lapflow/baselines.hpp"
#include "lapflow/error.hpp"
#include "lapflow/pyramid.hpp"

using namespace lapflow;

namespace {

ModelConfig stage_model(std::size_t stages) {
  ModelConfig c;
  c.scales = 1;
  c.num_stages = stages;
  c.width = 16;
  c.heads = 2;
  c.depth = 1;
  c.patch = 2;
  c.image_size = 16;
  c.freq_dim = 32;
  return c;
}

MoTModel<float> zero_velocity_model(const ModelConfig& c) {
  MoTModel<float> m(c);
  Rng rng(1);
  m.init(rng);
  return m;
}

MoTModel<float> random_model(const ModelConfig& c, std::uint64_t seed) {
  MoTModel<float> m(c);
  Rng rng(seed);
  m.randomize_all(rng, 0.2);
  return m;
}

EdifySpec edify3(double t1 = 0.67, double t2 = 0.33) {
  EdifySpec s;
  s.schedule.scales = 3;
  s.schedule.critical_times = {t1, t2};
  return s;
}

SolverConfig euler(std::size_t steps) {
  SolverConfig s;
  s.kind = SolverKind::euler;
  s.steps = steps;
  return s;
}

// Pooled mean of 2^k x 2^k blocks, computed directly.
Tensor<float> pool(const Tensor<float>& x, std::size_t f) {
  const std::size_t c = x.dim(0), h = x.dim(1) / f, w = x.dim(2) / f;
  Tensor<float> out(Shape{c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double s = 0.0;
        for (std::size_t a = 0; a < f; ++a)
          for (std::size_t b = 0; b < f; ++b) s += x(ch, i * f + a, j * f + b);
        out(ch, i, j) = static_cast<float>(s / static_cast<double>(f * f));
      }
  return out;
}

double variance(const Tensor<float>& x) {
  double m = 0.0, s = 0.0;
  for (float v : x.data()) m += v;
  m /= static_cast<double>(x.size());
  for (float v : x.data()) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

void expect_near_all(const Tensor<float>& a, const Tensor<float>& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << i;
}

}  // namespace

TEST(Edify, Endpoints) {
  Rng rng(1);
  const auto x1 = rng.normal_tensor<float>(Shape{1, 16, 16});
  const auto x0 = rng.normal_tensor<float>(Shape{1, 16, 16});
  const auto spec = edify3();
  for (std::size_t k = 0; k < 3; ++k) {
    const auto p = edify_state_and_velocity(x1, x0, k, 1.0, spec);
    expect_near_all(p.x, pool(x1, std::size_t{1} << k), 1e-6);
  }
  const auto p = edify_state_and_velocity(x1, x0, 2, 0.0, spec);
  expect_near_all(p.x, pool(x0, 4), 1e-6);
  EXPECT_THROW(edify_state_and_velocity(x1, x0, 0, 0.5, spec), DomainError);
  EXPECT_THROW(edify_state_and_velocity(x1, x0, 1, 1.01, spec), DomainError);
  EXPECT_NO_THROW(edify_state_and_velocity(x1, x0, 1, 0.33, spec));
}

TEST(Edify, VelocityIsTimeDerivative) {
  Rng rng(2);
  const auto x1 = rng.normal_tensor<float>(Shape{1, 16, 16});
  const auto x0 = rng.normal_tensor<float>(Shape{1, 16, 16});
  for (auto mean : {MeanSchedule::linear, MeanSchedule::smoothstep}) {
    auto spec = edify3();
    spec.mean = mean;
    for (std::size_t k = 0; k < 3; ++k) {
      const double t = 0.8, h = 1e-3;
      const auto p = edify_state_and_velocity(x1, x0, k, t, spec);
      const auto a = edify_state_and_velocity(x1, x0, k, t + h, spec);
      const auto b = edify_state_and_velocity(x1, x0, k, t - h, spec);
      // States are float, so the difference quotient carries about
      // ulp(|x|) / h of rounding on top of the O(h^2) truncation.
      for (std::size_t i = 0; i < p.u.size(); ++i) {
        const double fd = (static_cast<double>(a.x[i]) - b.x[i]) / (2 * h);
        ASSERT_NEAR(p.u[i], fd, 1e-4 * (1.0 + std::abs(fd)));
      }
    }
  }
}

TEST(Edify, ObjectiveExamples) {
  EdifyObjective obj(edify3());
  Rng rng(3);
  const auto x1 = rng.normal_tensor<float>(Shape{1, 16, 16});
  std::vector<int> seen(3, 0);
  for (int i = 0; i < 60; ++i) {
    Rng r = rng.substream(i);
    const auto ex = obj.make(x1, r);
    ASSERT_EQ(ex.state.levels.size(), 1u);
    ASSERT_EQ(ex.state.stage, std::optional<std::size_t>(ex.stage));
    const std::size_t side = 16 >> ex.stage;
    EXPECT_EQ(ex.state.levels[0].shape(), (Shape{1, side, side}));
    EXPECT_EQ(ex.target[0].shape(), ex.state.levels[0].shape());
    EXPECT_GE(ex.t, edify3().schedule.start(ex.stage));
    ++seen[ex.stage];
  }
  for (int c : seen) EXPECT_GT(c, 0);
}

TEST(Edify, ZeroVelocitySample) {
  const auto m = zero_velocity_model(stage_model(3));
  Rng rng(4);
  const auto x0 = rng.normal_tensor<float>(Shape{1, 16, 16});
  const double T1 = 0.67, T2 = 0.33;
  const auto out = edify_sample(m, edify3(T1, T2), x0, {}, SolverConfig{});
  // Identity integrations between the two re-noise steps.
  const Tensor<float> x2 = pool(x0, 4);
  Tensor<float> x1s = up(x2);
  const Tensor<float> d2 = pool(x0, 2), ud4 = up(pool(x0, 4));
  for (std::size_t i = 0; i < x1s.size(); ++i) x1s[i] += (1 - T2) * (d2[i] - ud4[i]);
  Tensor<float> x0s = up(x1s);
  const Tensor<float> ud2 = up(pool(x0, 2));
  for (std::size_t i = 0; i < x0s.size(); ++i) x0s[i] += (1 - T1) * (x0[i] - ud2[i]);
  expect_near_all(out.image, x0s, 1e-5);
  ASSERT_EQ(out.segments.size(), 3u);
  EXPECT_EQ(out.segments[0].t_start, 0.0);
  EXPECT_EQ(out.segments[0].t_end, T2);
  EXPECT_EQ(out.segments[2].t_end, 1.0);
}

TEST(Edify, SampleDeterminism) {
  const auto m = random_model(stage_model(2), 5);
  EdifySpec spec;
  spec.schedule = ScheduleSpec::uniform(2);
  Rng rng(6);
  const auto x0 = rng.normal_tensor<float>(Shape{1, 16, 16});
  const auto a = edify_sample(m, spec, x0, {}, euler(4));
  const auto b = edify_sample(m, spec, x0, {}, euler(4));
  for (std::size_t i = 0; i < a.image.size(); ++i) ASSERT_EQ(a.image[i], b.image[i]);
  EXPECT_EQ(a.nfe(), 8u);
  EdifySpec three = edify3();
  EXPECT_THROW(edify_sample(m, three, x0, {}, euler(4)), DimensionError);
}

TEST(Pyramidal, SpecFromSchedule) {
  ScheduleSpec s;
  s.scales = 3;
  s.critical_times = {0.67, 0.33};
  const auto p = PyramidalSpec::from_schedule(s);
  EXPECT_EQ(p.starts, (std::vector<double>{0.67, 0.33, 0.0}));
  EXPECT_EQ(p.ends, (std::vector<double>{1.0, 0.67, 0.33}));
  PyramidalSpec bad = p;
  bad.starts[0] = 0.6;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Pyramidal, TrainTargetsEndpointsAndAffinePath) {
  Rng rng(7);
  const auto x1 = rng.normal_tensor<float>(Shape{1, 16, 16});
  const auto x0 = rng.normal_tensor<float>(Shape{1, 16, 16});
  ScheduleSpec s;
  s.scales = 3;
  s.critical_times = {0.67, 0.33};
  const auto spec = PyramidalSpec::from_schedule(s);
  for (std::size_t k = 0; k < 3; ++k) {
    const double sk = spec.starts[k], ek = spec.ends[k];
    const std::size_t f = std::size_t{1} << k;
    const Tensor<float> n = pool(x0, f), d = pool(x1, f);
    Tensor<float> xs(n.shape()), xe(n.shape());
    const Tensor<float> blur = up(pool(x1, 2 * f));
    for (std::size_t i = 0; i < n.size(); ++i) {
      xs[i] = static_cast<float>(sk * blur[i] + (1 - sk) * n[i]);
      xe[i] = static_cast<float>(ek * d[i] + (1 - ek) * n[i]);
    }
    expect_near_all(pf_train_targets(x1, x0, k, sk, spec).x, xs, 1e-5);
    expect_near_all(pf_train_targets(x1, x0, k, ek, spec).x, xe, 1e-5);
    const double t = 0.5 * (sk + ek), h = 0.25 * (ek - sk);
    const auto p = pf_train_targets(x1, x0, k, t, spec);
    const auto a = pf_train_targets(x1, x0, k, t + h, spec);
    for (std::size_t i = 0; i < p.u.size(); ++i) {
      ASSERT_NEAR(p.u[i], (a.x[i] - p.x[i]) / h, 1e-4);
      ASSERT_NEAR(p.u[i], (xe[i] - xs[i]) / (ek - sk), 1e-4);
    }
  }
  EXPECT_THROW(pf_train_targets(x1, x0, 1, 0.9, spec), DomainError);
}

TEST(Pyramidal, JumpWithFullStartAddsNothing) {
  Rng rng(8);
  const auto x0 = rng.normal_tensor<float>(Shape{1, 16, 16});
  const auto xe = rng.normal_tensor<float>(Shape{1, 8, 8});
  for (auto mode : {PfJump::algorithmic, PfJump::variance_matched}) {
    Rng r(1);
    expect_near_all(pf_jump(xe, x0, 1, 1.0, mode, r), up(xe), 0.0);
  }
  Rng r(1);
  EXPECT_THROW(pf_jump(xe, x0, 0, 0.5, PfJump::algorithmic, r), DomainError);
}

TEST(Pyramidal, VarianceMatchedNoiseMoments) {
  // With x_end = 0 and s_prev = 0 the jump is alpha * m at k = 1.
  const Tensor<float> zero(Shape{1, 512, 512});
  const Tensor<float> x0(Shape{1, 1024, 1024});
  Rng rng(9);
  const auto j = pf_jump(zero, x0, 1, 0.0, PfJump::variance_matched, rng);
  ASSERT_EQ(j.size(), 1u << 20);
  const double alpha = std::sqrt(3.0 / 4.0);
  double ss = 0.0, max_block = 0.0;
  for (float v : j.data()) ss += (v / alpha) * (v / alpha);
  EXPECT_NEAR(ss / static_cast<double>(j.size()), 1.0, 0.02);
  const Tensor<float> blocks = pool(j, 2);
  for (float v : blocks.data()) max_block = std::max(max_block, std::abs(static_cast<double>(v)));
  EXPECT_LT(max_block, 1e-6);
}

TEST(Pyramidal, JumpMatchesNextStageStartVariance) {
  ScheduleSpec s;
  s.scales = 3;
  s.critical_times = {0.67, 0.33};
  const auto spec = PyramidalSpec::from_schedule(s);
  const Tensor<float> x1(Shape{1, 512, 512});
  Rng rng(10);
  for (std::size_t k : {1, 2}) {
    for (auto mode : {PfJump::variance_matched, PfJump::algorithmic}) {
      const auto x0a = rng.normal_tensor<float>(x1.shape());
      const auto x0b = rng.normal_tensor<float>(x1.shape());
      const auto end = pf_train_targets(x1, x0a, k, spec.ends[k], spec).x;
      Rng jr = rng.substream(k);
      const auto jumped = pf_jump(end, x0a, k, spec.starts[k - 1], mode, jr);
      const auto start = pf_train_targets(x1, x0b, k - 1, spec.starts[k - 1], spec).x;
      const double want = std::pow(1 - spec.starts[k - 1], 2) / std::pow(4.0, double(k - 1));
      EXPECT_NEAR(variance(start) / want, 1.0, 0.03) << k;
      EXPECT_NEAR(variance(jumped) / variance(start), 1.0, 0.02) << k << " " << to_string(mode);
    }
  }
}

TEST(Pyramidal, ZeroVelocitySample) {
  const auto m = zero_velocity_model(stage_model(2));
  const auto spec = PyramidalSpec::from_schedule(ScheduleSpec::uniform(2));
  Rng rng(11);
  const auto x0 = rng.normal_tensor<float>(Shape{1, 16, 16});
  const auto init = rng.normal_tensor<float>(Shape{1, 8, 8});
  Rng jr(0);
  const auto out = pf_sample(m, spec, x0, init, PfJump::algorithmic, jr, {}, SolverConfig{});
  Tensor<float> want = up(init);
  const Tensor<float> ud = up(pool(x0, 2));
  for (std::size_t i = 0; i < want.size(); ++i) want[i] += 0.5f * (x0[i] - ud[i]);
  expect_near_all(out.image, want, 1e-5);
  ASSERT_EQ(out.segments.size(), 2u);
  EXPECT_EQ(out.segments[0].t_start, 0.0);
  EXPECT_EQ(out.segments[0].t_end, 0.5);
}

TEST(Pyramidal, SingleStageAndDeterminism) {
  const auto spec1 = PyramidalSpec::from_schedule(ScheduleSpec::uniform(1));
  const auto m1 = zero_velocity_model(stage_model(1));
  Rng rng(12);
  const auto x0 = rng.normal_tensor<float>(Shape{1, 16, 16});
  Rng jr(0);
  const auto out = pf_sample(m1, spec1, x0, x0, PfJump::algorithmic, jr, {}, euler(3));
  expect_near_all(out.image, x0, 0.0);
  ASSERT_EQ(out.segments.size(), 1u);
  EXPECT_EQ(out.segments[0].t_end, 1.0);

  const auto m2 = random_model(stage_model(2), 13);
  const auto spec2 = PyramidalSpec::from_schedule(ScheduleSpec::uniform(2));
  const auto init = rng.normal_tensor<float>(Shape{1, 8, 8});
  Rng ja(5), jb(5);
  const auto a = pf_sample(m2, spec2, x0, init, PfJump::variance_matched, ja, {}, euler(3));
  const auto b = pf_sample(m2, spec2, x0, init, PfJump::variance_matched, jb, {}, euler(3));
  for (std::size_t i = 0; i < a.image.size(); ++i) ASSERT_EQ(a.image[i], b.image[i]);
}

TEST(Pyramidal, ObjectiveExamples) {
  const auto spec = PyramidalSpec::from_schedule(ScheduleSpec::uniform(2));
  PyramidalObjective obj(spec);
  Rng rng(14);
  const auto x1 = rng.normal_tensor<float>(Shape{1, 16, 16});
  for (int i = 0; i < 40; ++i) {
    Rng r = rng.substream(i);
    const auto ex = obj.make(x1, r);
    EXPECT_GE(ex.t, spec.starts[ex.stage]);
    EXPECT_LE(ex.t, spec.ends[ex.stage]);
    const std::size_t side = 16 >> ex.stage;
    EXPECT_EQ(ex.state.levels[0].shape(), (Shape{1, side, side}));
  }
}

TEST(Baselines, LfmIsSingleScaleLapFlow) {
  LapFlowObjective lfm(ScheduleSpec::uniform(1));
  EXPECT_EQ(lfm.name(), "lfm");
  EXPECT_EQ(lfm.spec(), ScheduleSpec::uniform(1));
  EXPECT_EQ(LapFlowObjective(ScheduleSpec::uniform(2)).name(), "lapflow");
}
