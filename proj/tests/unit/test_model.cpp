#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include "lapflow/checkpoint.hpp"
#include "lapflow/error.hpp"
#include "lapflow/gradcheck.hpp"
#include "lapflow/model.hpp"
#include "lapflow/ops.hpp"
#include "lapflow/pyramid.hpp"

using namespace lapflow;
using TD = Tensor<double>;

namespace {

ModelConfig small_config(std::size_t K = 2) {
  ModelConfig c;
  c.scales = K;
  c.width = 16;
  c.heads = 2;
  c.depth = 2;
  c.patch = 1;
  c.channels = 1;
  c.image_size = 8;
  c.freq_dim = 32;
  return c;
}

FlowState<double> random_state(const ModelConfig& c, std::size_t first, std::uint64_t seed,
                               double t = 0.7) {
  Rng rng(seed);
  FlowState<double> s;
  s.first = first;
  s.t = t;
  s.levels.resize(c.scales);
  for (std::size_t k = first; k < c.scales; ++k) {
    const std::size_t side = c.image_size >> k;
    s.levels[k] = rng.substream(k).normal_tensor<double>({c.channels, side, side});
  }
  return s;
}

bool allowed(const TD& mask, std::size_t i, std::size_t j) { return mask(i, j) == 0.0; }

}  // namespace

TEST(BuildMask, SingleScaleIsFull) {
  std::vector<std::size_t> counts{5};
  auto m = build_mask<double>(counts, 0);
  for (double v : m.data()) EXPECT_EQ(v, 0.0);
}

TEST(BuildMask, TwoScalesOneCondToken) {
  std::vector<std::size_t> counts{1, 1};
  auto m = build_mask<double>(counts, 1);
  const int want[3][3] = {{1, 0, 0}, {1, 1, 0}, {1, 1, 1}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(allowed(m, i, j), want[i][j] == 1) << i << j;
  EXPECT_EQ(m(0, 1), -std::numeric_limits<double>::infinity());
}

TEST(BuildMask, BlockLowerTriangular) {
  std::vector<std::size_t> counts{1, 4, 16};
  auto m = build_mask<double>(counts, 2);
  const std::size_t n = m.dim(0);
  ASSERT_EQ(n, 23u);
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t j = i + 1; j < n; ++j) {
      // Above the diagonal only same-group pairs may be visible.
      auto group = [](std::size_t r) { return r < 2 ? 0 : r < 3 ? 1 : r < 7 ? 2 : 3; };
      if (allowed(m, i, j)) EXPECT_EQ(group(i), group(j));
    }
    for (std::size_t j = 0; j < n; ++j) any |= allowed(m, i, j);
    EXPECT_TRUE(any);
  }
}

TEST(Patchify, PerPixelTokens) {
  Rng rng(1);
  auto x = rng.normal_tensor<double>({3, 2, 4});
  auto rows = patchify(x, 1);
  ASSERT_EQ(rows.shape(), (Shape{8, 3}));
  EXPECT_EQ(rows(5, 2), x(2, 1, 1));
}

TEST(Patchify, RowMajorPatchOrder) {
  TD x({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  auto rows = patchify(x, 2);
  ASSERT_EQ(rows.shape(), (Shape{4, 4}));
  const double want[4][4] = {{0, 1, 4, 5}, {2, 3, 6, 7}, {8, 9, 12, 13}, {10, 11, 14, 15}};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(rows(r, c), want[r][c]);
  EXPECT_EQ(unpatchify(rows, 1, 4, 4, 2), x);
  EXPECT_THROW(patchify(TD({1, 3, 4}), 2), DimensionError);
}

TEST(Patchify, DifferentiableRoundTrip) {
  Rng rng(2);
  auto report = grad_check(
      [](Tape<double>&, std::span<const Var<double>> in) {
        auto rows = ops::patchify(in[0], 2);
        auto back = ops::unpatchify(ops::mul(rows, rows), 2, 4, 4, 2);
        return ops::sum(ops::mul(back, in[1]));
      },
      {rng.normal_tensor<double>({2, 4, 4}), rng.normal_tensor<double>({2, 4, 4})});
  EXPECT_LE(report.max_rel_error, 1e-6);
}

TEST(PosEmbed, DeterministicDistinctBounded) {
  auto a = pos_embed<double>(64, 64, 64);
  EXPECT_EQ(a, pos_embed<double>(64, 64, 64));
  for (double v : a.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  const std::size_t n = a.dim(0), d = a.dim(1);
  double closest = 1e9;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double dist = 0;
      for (std::size_t c = 0; c < d; ++c) dist += (a(i, c) - a(j, c)) * (a(i, c) - a(j, c));
      closest = std::min(closest, dist);
    }
  EXPECT_GT(closest, 1e-6);
  EXPECT_THROW(pos_embed<double>(2, 2, 6), DimensionError);
}

TEST(TimeFeatures, InjectiveOnMilliGrid) {
  for (int i = 0; i < 1000; ++i) {
    auto a = time_features<double>(i * 1e-3, 256);
    auto b = time_features<double>((i + 1) * 1e-3, 256);
    EXPECT_GT(max_abs_diff(a, b), 1e-3) << i;
  }
}

TEST(CondTokens, CountsFollowConditioning) {
  ModelConfig c = small_config(1);
  EXPECT_EQ(c.cond_tokens(), 1u);
  MoTModel<double> uncond(c);
  std::vector<TD> trace;
  Tape<double> tape(false);
  auto bound = uncond.bind(tape, false);
  uncond.forward(tape, bound, random_state(c, 0, 1), &trace);
  EXPECT_EQ(trace.front().dim(0), 1u + 64u);

  c.num_classes = 10;
  EXPECT_EQ(c.cond_tokens(), 2u);
  MoTModel<double> cond(c);
  Rng rng(3);
  cond.init(rng);
  auto s = random_state(c, 0, 1);
  s.label = 3;
  trace.clear();
  Tape<double> tape2(false);
  auto bound2 = cond.bind(tape2, false);
  cond.forward(tape2, bound2, s, &trace);
  EXPECT_EQ(trace.front().dim(0), 2u + 64u);
  s.label = 11;
  EXPECT_THROW(cond.velocity(s), DomainError);
}

TEST(CondTokens, NearbyTimesGiveDistinctTokens) {
  ModelConfig c = small_config(1);
  MoTModel<double> m(c);
  Rng rng(4);
  m.init(rng);
  auto first_row = [&](double t) {
    std::vector<TD> trace;
    Tape<double> tape(false);
    auto bound = m.bind(tape, false);
    m.forward(tape, bound, random_state(c, 0, 1, t), &trace);
    std::vector<double> row(trace[0].data().begin(), trace[0].data().begin() + c.width);
    return row;
  };
  auto a = first_row(0.500), b = first_row(0.501);
  EXPECT_NE(a, b);
}

TEST(MoTModel, ZeroInitGivesZeroVelocityAndIdentityBlocks) {
  for (std::size_t first : {0u, 1u}) {
    ModelConfig c = small_config(2);
    MoTModel<double> m(c);
    Rng rng(5);
    m.init(rng);
    auto s = random_state(c, first, 9);
    std::vector<TD> trace;
    Tape<double> tape(false);
    auto bound = m.bind(tape, false);
    auto out = m.forward(tape, bound, s, &trace);
    ASSERT_EQ(trace.size(), c.depth + 1);
    for (std::size_t b = 1; b < trace.size(); ++b) EXPECT_EQ(trace[b], trace[0]);
    for (std::size_t k = 0; k < 2; ++k) {
      if (k < first) {
        EXPECT_FALSE(out[k].valid());
        continue;
      }
      ASSERT_EQ(out[k].shape(), s.levels[k].shape());
      for (double v : out[k].value().data()) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(MoTModel, InitialisationIsSeededAndTruncated) {
  ModelConfig c = small_config(2);
  MoTModel<float> a(c), b(c);
  Rng r1(6), r2(6);
  a.init(r1);
  b.init(r2);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i].value, b.params()[i].value);
  }
  for (float v : a.param("scale0.block0.qkv.w").data()) EXPECT_LE(std::abs(v), 0.04f + 1e-7f);
  for (float v : a.param("scale1.block1.mod.w").data()) EXPECT_EQ(v, 0.0f);
  for (float v : a.param("scale0.final.decode.w").data()) EXPECT_EQ(v, 0.0f);
}

TEST(MoTModel, CoarseOutputsIgnoreFinerInputs) {
  ModelConfig c = small_config(3);
  MoTModel<double> m(c);
  Rng rng(7);
  m.randomize_all(rng, 0.2);
  auto s = random_state(c, 0, 11);
  auto base = m.velocity(s);
  for (int trial = 0; trial < 5; ++trial) {
    auto p = s;
    Rng r(100 + trial);
    p.levels[0] = r.normal_tensor<double>(p.levels[0].shape());
    auto out = m.velocity(p);
    EXPECT_LE(max_abs_diff(out[1], base[1]), 1e-12);
    EXPECT_LE(max_abs_diff(out[2], base[2]), 1e-12);
    EXPECT_GT(max_abs_diff(out[0], base[0]), 1e-6);
    p.levels[1] = r.normal_tensor<double>(p.levels[1].shape());
    out = m.velocity(p);
    EXPECT_LE(max_abs_diff(out[2], base[2]), 1e-12);
  }
}

TEST(MoTModel, FinerExpertsGetNoGradientFromCoarseLoss) {
  ModelConfig c = small_config(2);
  MoTModel<double> m(c);
  Rng rng(8);
  m.randomize_all(rng, 0.2);
  Tape<double> tape;
  auto bound = m.bind(tape);
  auto out = m.forward(tape, bound, random_state(c, 0, 12));
  auto grads = tape.backward(ops::sum(ops::mul(out[1], out[1])));
  std::size_t coarse_nonzero = 0;
  for (std::size_t i = 0; i < bound.size(); ++i) {
    const auto& name = m.params()[i].name;
    double mx = 0;
    for (double v : grads[bound[i]].data()) mx = std::max(mx, std::abs(v));
    if (name.rfind("scale0.", 0) == 0) {
      EXPECT_EQ(mx, 0.0) << name;
    } else if (name.rfind("scale1.", 0) == 0 && mx > 0) {
      ++coarse_nonzero;
    }
  }
  EXPECT_GT(coarse_nonzero, 0u);
}

TEST(MoTModel, EndToEndGradCheck) {
  ModelConfig c = small_config(2);
  c.width = 8;
  c.image_size = 4;
  c.freq_dim = 16;
  MoTModel<double> m(c);
  Rng rng(9);
  m.randomize_all(rng, 0.3);
  auto state = random_state(c, 0, 13, 0.6);
  std::vector<TD> inputs;
  for (auto& p : m.params()) inputs.push_back(p.value);
  const MoTModel<double>* model = &m;
  auto report = grad_check(
      [model, state](Tape<double>& tape, std::span<const Var<double>> params) {
        auto out = model->forward(tape, params, state);
        return ops::add(ops::mean(ops::mul(out[0], out[0])), ops::mean(ops::mul(out[1], out[1])));
      },
      inputs);
  EXPECT_LE(report.max_rel_error, 1e-4);
  EXPECT_EQ(report.coordinates, m.num_parameters());
}

TEST(MoTModel, RejectsMalformedStates) {
  ModelConfig c = small_config(2);
  MoTModel<double> m(c);
  auto s = random_state(c, 1, 14);
  s.levels[0] = TD({1, 8, 8});
  EXPECT_THROW(m.velocity(s), DimensionError);
  s = random_state(c, 0, 14);
  s.levels[1] = TD({1, 3, 3});
  EXPECT_THROW(m.velocity(s), DimensionError);
  s = random_state(c, 0, 14);
  s.levels.pop_back();
  EXPECT_THROW(m.velocity(s), DimensionError);
}

TEST(MoTModel, StageTokenModelsAcceptStageResolution) {
  ModelConfig c = small_config(1);
  c.num_stages = 3;
  EXPECT_EQ(c.cond_tokens(), 2u);
  MoTModel<double> m(c);
  Rng rng(15);
  m.randomize_all(rng, 0.1);
  FlowState<double> s;
  s.levels = {Rng(1).normal_tensor<double>({1, 2, 2})};
  s.stage = 2;
  s.t = 0.2;
  auto v = m.velocity(s);
  EXPECT_EQ(v[0].shape(), (Shape{1, 2, 2}));
  s.stage.reset();
  EXPECT_THROW(m.velocity(s), DomainError);
}

TEST(ModelConfig, ValidateNamesKeys) {
  ModelConfig c = small_config(2);
  c.heads = 3;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "model.heads");
  }
  c = small_config(4);
  c.patch = 2;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "model.image_size");
  }
}

TEST(Checkpoint, RoundTrip) {
  ModelConfig c = small_config(2);
  c.num_classes = 4;
  MoTModel<float> m(c);
  Rng rng(16);
  m.randomize_all(rng, 0.1);
  Checkpoint ck;
  ck.model = c;
  ck.schedule = ScheduleSpec::uniform(2, PathKind::gvp);
  ck.method = "lapflow";
  ck.step = 123;
  ck.run_config = R"({"seed":5})";
  ck.params = m.params();
  ck.ema = m.params();
  for (auto& e : ck.ema) e.value[0] += 1.0f;
  const auto path = (std::filesystem::temp_directory_path() / "lapflow_ckpt_test.lapf").string();
  save_checkpoint(path, ck);
  Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.model, c);
  EXPECT_EQ(back.schedule, ck.schedule);
  EXPECT_EQ(back.step, 123u);
  EXPECT_EQ(back.run_config, R"({"seed":5})");
  auto raw = model_from_checkpoint(back, false);
  auto ema = model_from_checkpoint(back, true);
  for (std::size_t i = 0; i < raw.params().size(); ++i) {
    EXPECT_EQ(raw.params()[i].value, m.params()[i].value);
    EXPECT_EQ(ema.params()[i].value, ck.ema[i].value);
  }
  std::remove(path.c_str());
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
}
