#include "lapflow/sampler.hpp"

#include <chrono>

#include "lapflow/baselines.hpp"
#include "lapflow/checkpoint.hpp"
#include "lapflow/error.hpp"
#include "lapflow/rng.hpp"

namespace lapflow {

std::size_t SampleOutput::nfe() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.nfe;
  return n;
}

std::vector<Tensor<float>> cfg_velocity(const MoTModel<float>& model, const FlowState<float>& state,
                                        std::optional<std::size_t> label, double w) {
  const ModelConfig& cf = model.config();
  if (w == 1.0) {
    FlowState<float> s = state;
    s.label = label;
    return model.velocity(s);
  }
  if (cf.num_classes == 0) {
    throw DomainError("classifier-free guidance needs a class-conditional model");
  }
  FlowState<float> null_state = state;
  null_state.label = cf.null_label();
  auto v_null = model.velocity(null_state);
  if (w == 0.0) return v_null;
  if (!label) throw DomainError("classifier-free guidance needs a label");
  FlowState<float> cond = state;
  cond.label = label;
  auto v = model.velocity(cond);
  const float wf = static_cast<float>(w);
  for (std::size_t k = 0; k < v.size(); ++k) {
    for (std::size_t i = 0; i < v[k].size(); ++i) {
      v[k][i] = v_null[k][i] + wf * (v[k][i] - v_null[k][i]);
    }
  }
  return v;
}

SegmentStats integrate_levels(const MoTModel<float>& model, std::vector<Tensor<float>>& levels,
                              std::size_t first, std::optional<std::size_t> stage, double t_start,
                              double t_end, const Guidance& guidance, const SolverConfig& solver,
                              std::size_t segment) {
  SegmentStats st;
  st.segment = segment;
  st.t_start = t_start;
  st.t_end = t_end;
  if (!(t_start < t_end)) return st;  // empty segment

  const std::size_t K = levels.size();
  std::vector<double> y;
  for (std::size_t k = first; k < K; ++k) {
    for (float v : levels[k].data()) y.push_back(v);
  }
  FlowState<float> state;
  state.first = first;
  state.stage = stage;
  state.levels.resize(K);
  for (std::size_t k = first; k < K; ++k) state.levels[k] = Tensor<float>(levels[k].shape());

  OdeFn f = [&](double t, const std::vector<double>& yy, std::vector<double>& dy) {
    std::size_t off = 0;
    for (std::size_t k = first; k < K; ++k) {
      auto& lv = state.levels[k];
      for (std::size_t i = 0; i < lv.size(); ++i) lv[i] = static_cast<float>(yy[off + i]);
      off += lv.size();
    }
    state.t = t;
    const auto v = cfg_velocity(model, state, guidance.label, guidance.scale);
    off = 0;
    for (std::size_t k = first; k < K; ++k) {
      for (std::size_t i = 0; i < v[k].size(); ++i) dy[off + i] = v[k][i];
      off += v[k].size();
    }
  };

  OdeResult r;
  try {
    r = odeint(f, t_start, t_end, std::move(y), solver);
  } catch (const DivergenceError& e) {
    throw DivergenceError("segment " + std::to_string(segment) + ": " + e.what());
  }
  std::size_t off = 0;
  for (std::size_t k = first; k < K; ++k) {
    auto& lv = levels[k];
    for (std::size_t i = 0; i < lv.size(); ++i) lv[i] = static_cast<float>(r.y[off + i]);
    off += lv.size();
  }
  st.nfe = r.nfe;
  st.accepted = r.accepted;
  st.rejected = r.rejected;
  return st;
}

SampleOutput lapflow_sample(const MoTModel<float>& model, const ScheduleSpec& spec,
                            const Pyramid<float>& noise, const Guidance& guidance,
                            const SolverConfig& solver) {
  const std::size_t K = spec.scales;
  if (model.config().scales != K || noise.scales() != K) {
    throw DimensionError("lapflow_sample: model, schedule and noise pyramid disagree on the scale count");
  }
  SampleOutput out;
  std::vector<Tensor<float>> levels(K);
  for (std::size_t j = K; j-- > 0;) {
    const double t0 = spec.start(j), t1 = spec.critical(j);
    const float sigma = static_cast<float>(coeffs(spec, j, t0).sigma);
    levels[j] = Tensor<float>(noise.levels[j].shape());
    for (std::size_t i = 0; i < levels[j].size(); ++i) levels[j][i] = sigma * noise.levels[j][i];
    out.segments.push_back(integrate_levels(model, levels, j, std::nullopt, t0, t1, guidance,
                                            solver, j));
  }
  Pyramid<float> result{std::move(levels)};
  out.image = reconstruct(result);
  return out;
}

PfJump parse_pf_jump(const std::string& name) {
  if (name == "algorithmic") return PfJump::algorithmic;
  if (name == "variance_matched") return PfJump::variance_matched;
  throw ConfigError("sample.pf_jump", "unknown jump mode '" + name +
                                          "' (expected algorithmic or variance_matched)");
}

std::string to_string(PfJump mode) {
  return mode == PfJump::algorithmic ? "algorithmic" : "variance_matched";
}

void SampleConfig::validate() const {
  if (count == 0) throw ConfigError("sample.count", "must be positive");
  if (!(cfg_scale >= 1.0)) throw ConfigError("sample.cfg", "guidance scale must be >= 1");
  solver.validate();
}

SampleBatch sample(const Checkpoint& ckpt, const SampleConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const MoTModel<float> model = model_from_checkpoint(ckpt, config.use_ema);
  const ModelConfig& mc = model.config();
  if (config.cfg_scale > 1.0 && mc.num_classes == 0) {
    throw ConfigError("sample.cfg", "guidance needs a class-conditional checkpoint");
  }
  if (mc.num_classes == 0 && !config.labels.empty()) {
    throw ConfigError("sample.label", "labels given for an unconditional checkpoint");
  }
  for (std::size_t l : config.labels) {
    if (l >= mc.num_classes) {
      throw ConfigError("sample.label", "label " + std::to_string(l) + " outside " +
                                            std::to_string(mc.num_classes) + " classes");
    }
  }

  const std::string& method = ckpt.method;
  const std::size_t size = mc.image_size;
  const Shape full{mc.channels, size, size};
  SampleBatch batch;
  batch.method = method;
  const Rng root = Rng(config.seed).stream("sample");
  for (std::size_t i = 0; i < config.count; ++i) {
    Guidance g;
    g.scale = config.cfg_scale;
    if (!config.labels.empty()) {
      g.label = config.labels[i % config.labels.size()];
    } else if (mc.num_classes > 0) {
      g.label = i % mc.num_classes;
    }
    Rng rng = root.substream(i);
    Rng noise_rng = rng.stream("noise");
    SampleOutput out;
    if (method == "lapflow" || method == "lfm") {
      const ScheduleSpec& spec = ckpt.schedule;
      const auto noise = noise_pyramid<float>(noise_rng, full, spec.scales,
                                              spec.independent_scale_noise);
      out = lapflow_sample(model, spec, noise, g, config.solver);
    } else if (method == "edify") {
      EdifySpec es;
      es.schedule = ckpt.schedule;
      const auto x0 = noise_rng.normal_tensor<float>(full);
      out = edify_sample(model, es, x0, g, config.solver);
    } else if (method == "pyramidal") {
      const auto ps = PyramidalSpec::from_schedule(ckpt.schedule);
      const auto x0 = noise_rng.normal_tensor<float>(full);
      const std::size_t coarse = size >> (ps.stages() - 1);
      Rng init_rng = rng.stream("initial");
      auto init = init_rng.normal_tensor<float>(Shape{mc.channels, coarse, coarse});
      const float sd = 1.0f / static_cast<float>(std::size_t{1} << (ps.stages() - 1));
      for (auto& v : init.data()) v *= sd;
      Rng jump_rng = rng.stream("jump");
      out = pf_sample(model, ps, x0, init, config.pf_jump, jump_rng, g, config.solver);
    } else {
      throw ConfigError("method", "unknown method '" + method + "' in checkpoint");
    }
    batch.images.push_back(std::move(out.image));
    batch.labels.push_back(g.label);
    batch.segments.push_back(std::move(out.segments));
  }
  batch.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return batch;
}

SampleBatch sample(const SampleConfig& config) {
  return sample(load_checkpoint(config.checkpoint), config);
}

}  // namespace lapflow
