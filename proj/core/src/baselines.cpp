#include "lapflow/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lapflow/error.hpp"
#include "lapflow/pyramid.hpp"

namespace lapflow {

namespace {

std::size_t pow2(std::size_t k) { return std::size_t{1} << k; }

// a * x + b * y
template <typename T>
Tensor<T> axpby(double a, const Tensor<T>& x, double b, const Tensor<T>& y) {
  require_same_shape(x.shape(), y.shape(), "axpby");
  Tensor<T> out(x.shape());
  const T fa = static_cast<T>(a), fb = static_cast<T>(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fa * x[i] + fb * y[i];
  return out;
}

double mean_weight(MeanSchedule m, double t) {
  return m == MeanSchedule::linear ? t : t * t * (3.0 - 2.0 * t);
}

double mean_rate(MeanSchedule m, double t) {
  return m == MeanSchedule::linear ? 1.0 : 6.0 * t * (1.0 - t);
}

std::string time_str(double t) {
  std::ostringstream os;
  os << t;
  return os.str();
}

}  // namespace

MeanSchedule parse_mean_schedule(const std::string& name) {
  if (name == "linear") return MeanSchedule::linear;
  if (name == "smoothstep") return MeanSchedule::smoothstep;
  throw ConfigError("edify.mean_schedule",
                    "unknown mean schedule '" + name + "' (expected linear or smoothstep)");
}

std::string to_string(MeanSchedule m) {
  return m == MeanSchedule::linear ? "linear" : "smoothstep";
}

void EdifySpec::validate() const { schedule.validate(); }

template <typename T>
BasicPathSample<T> edify_state_and_velocity(const Tensor<T>& x1, const Tensor<T>& x0_full,
                                            std::size_t k, double t, const EdifySpec& spec) {
  if (k >= spec.stages()) {
    throw DomainError("edify: stage " + std::to_string(k) + " outside " +
                      std::to_string(spec.stages()) + " stages");
  }
  const double t0 = spec.schedule.start(k);
  if (t < t0 || t > 1.0) {
    throw DomainError("edify: t = " + time_str(t) + " outside [" + time_str(t0) +
                      ", 1] for stage " + std::to_string(k));
  }
  const Tensor<T> n = down_by(x0_full, pow2(k));
  const Tensor<T> d = down_by(x1, pow2(k));
  BasicPathSample<T> s;
  s.x = axpby(1.0 - t, n, mean_weight(spec.mean, t), d);
  s.u = axpby(-1.0, n, mean_rate(spec.mean, t), d);
  return s;
}

EdifyObjective::EdifyObjective(EdifySpec spec) : spec_(std::move(spec)) { spec_.validate(); }

TrainExample<float> EdifyObjective::make(const Tensor<float>& x1, Rng& rng) const {
  Rng noise_rng = rng.stream("noise");
  Rng time_rng = rng.stream("time");
  const Tensor<float> x0 = noise_rng.normal_tensor<float>(x1.shape());
  const StageTime st = sample_stage_time(time_rng, spec_.schedule);
  PathSample p = edify_state_and_velocity(x1, x0, st.stage, st.t, spec_);
  TrainExample<float> ex;
  ex.stage = st.stage;
  ex.t = st.t;
  ex.state.first = 0;
  ex.state.t = st.t;
  ex.state.stage = st.stage;
  ex.state.levels.push_back(std::move(p.x));
  ex.target.push_back(std::move(p.u));
  return ex;
}

SampleOutput edify_sample(const MoTModel<float>& model, const EdifySpec& spec,
                          const Tensor<float>& x0_full, const Guidance& guidance,
                          const SolverConfig& solver) {
  spec.validate();
  const std::size_t K = spec.stages();
  if (model.config().num_stages != K) {
    throw DimensionError("edify_sample: model has " + std::to_string(model.config().num_stages) +
                         " stage tokens for a " + std::to_string(K) + "-stage schedule");
  }
  SampleOutput out;
  std::vector<Tensor<float>> state{down_by(x0_full, pow2(K - 1))};
  for (std::size_t k = K; k-- > 0;) {
    const double t0 = spec.schedule.start(k), t1 = spec.schedule.critical(k);
    out.segments.push_back(integrate_levels(model, state, 0, k, t0, t1, guidance, solver, k));
    if (k > 0) {
      const Tensor<float> detail =
          axpby(1.0, down_by(x0_full, pow2(k - 1)), -1.0, up(down_by(x0_full, pow2(k))));
      state[0] = axpby(1.0, up(state[0]), 1.0 - t1, detail);
    }
  }
  out.image = std::move(state[0]);
  return out;
}

PyramidalSpec PyramidalSpec::from_schedule(const ScheduleSpec& schedule) {
  schedule.validate();
  PyramidalSpec s;
  for (std::size_t k = 0; k < schedule.scales; ++k) {
    s.starts.push_back(schedule.start(k));
    s.ends.push_back(schedule.critical(k));
  }
  return s;
}

void PyramidalSpec::validate() const {
  const std::size_t K = starts.size();
  if (K == 0 || ends.size() != K) {
    throw ConfigError("schedule.critical_times", "pyramidal stages need matching start and end times");
  }
  if (ends[0] != 1.0 || starts[K - 1] != 0.0) {
    throw ConfigError("schedule.critical_times", "pyramidal stages must span [0, 1]");
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (!(starts[k] < ends[k])) {
      throw ConfigError("schedule.critical_times", "stage " + std::to_string(k) + " is empty");
    }
    if (k > 0 && starts[k - 1] != ends[k]) {
      throw ConfigError("schedule.critical_times",
                        "pyramidal stages must be contiguous (s_{k-1} = e_k)");
    }
  }
}

template <typename T>
BasicPathSample<T> pf_train_targets(const Tensor<T>& x1, const Tensor<T>& x0_full, std::size_t k,
                                    double t, const PyramidalSpec& spec) {
  if (k >= spec.stages()) {
    throw DomainError("pyramidal: stage " + std::to_string(k) + " outside " +
                      std::to_string(spec.stages()) + " stages");
  }
  const double s = spec.starts[k], e = spec.ends[k];
  if (t < s || t > e) {
    throw DomainError("pyramidal: t = " + time_str(t) + " outside stage " + std::to_string(k) +
                      " [" + time_str(s) + ", " + time_str(e) + "]");
  }
  const Tensor<T> n = down_by(x0_full, pow2(k));
  const Tensor<T> d = down_by(x1, pow2(k));
  // The coarsest stage starts at s = 0, where the blurred data term vanishes.
  const Tensor<T> blurred = s > 0.0 ? up(down(d)) : Tensor<T>(d.shape());
  const Tensor<T> xs = axpby(s, blurred, 1.0 - s, n);
  const Tensor<T> xe = axpby(e, d, 1.0 - e, n);
  BasicPathSample<T> p;
  p.x = axpby((e - t) / (e - s), xs, (t - s) / (e - s), xe);
  p.u = axpby(1.0 / (e - s), xe, -1.0 / (e - s), xs);
  return p;
}

PyramidalObjective::PyramidalObjective(PyramidalSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
}

TrainExample<float> PyramidalObjective::make(const Tensor<float>& x1, Rng& rng) const {
  Rng noise_rng = rng.stream("noise");
  Rng time_rng = rng.stream("time");
  const Tensor<float> x0 = noise_rng.normal_tensor<float>(x1.shape());
  const std::size_t k = static_cast<std::size_t>(time_rng.uniform_int(spec_.stages()));
  const double s = spec_.starts[k], e = spec_.ends[k];
  const double t = std::min(e, s + (e - s) * time_rng.uniform_closed());
  PathSample p = pf_train_targets(x1, x0, k, t, spec_);
  TrainExample<float> ex;
  ex.stage = k;
  ex.t = t;
  ex.state.first = 0;
  ex.state.t = t;
  ex.state.stage = k;
  ex.state.levels.push_back(std::move(p.x));
  ex.target.push_back(std::move(p.u));
  return ex;
}

Tensor<float> pf_jump(const Tensor<float>& x_end, const Tensor<float>& x0_full, std::size_t k,
                      double s_prev, PfJump mode, Rng& rng) {
  if (k == 0) throw DomainError("pf_jump: the finest stage has no successor");
  const Tensor<float> upx = up(x_end);
  if (mode == PfJump::algorithmic) {
    const Tensor<float> detail =
        axpby(1.0, down_by(x0_full, pow2(k - 1)), -1.0, up(down_by(x0_full, pow2(k))));
    return axpby(1.0, upx, 1.0 - s_prev, detail);
  }
  const Tensor<float> eps = rng.normal_tensor<float>(upx.shape());
  const Tensor<float> m = axpby(std::sqrt(4.0 / 3.0), eps, -std::sqrt(4.0 / 3.0), up(down(eps)));
  const double alpha = std::sqrt(3.0 / std::pow(4.0, static_cast<double>(k)));
  return axpby(1.0, upx, (1.0 - s_prev) * alpha, m);
}

SampleOutput pf_sample(const MoTModel<float>& model, const PyramidalSpec& spec,
                       const Tensor<float>& x0_full, const Tensor<float>& initial, PfJump mode,
                       Rng& jump_rng, const Guidance& guidance, const SolverConfig& solver) {
  spec.validate();
  const std::size_t K = spec.stages();
  if (model.config().num_stages != K) {
    throw DimensionError("pf_sample: model has " + std::to_string(model.config().num_stages) +
                         " stage tokens for a " + std::to_string(K) + "-stage schedule");
  }
  SampleOutput out;
  std::vector<Tensor<float>> state{initial};
  for (std::size_t k = K; k-- > 0;) {
    out.segments.push_back(integrate_levels(model, state, 0, k, spec.starts[k], spec.ends[k],
                                            guidance, solver, k));
    if (k > 0) {
      Rng r = jump_rng.substream(k);
      state[0] = pf_jump(state[0], x0_full, k, spec.starts[k - 1], mode, r);
    }
  }
  out.image = std::move(state[0]);
  return out;
}

template BasicPathSample<float> edify_state_and_velocity(const Tensor<float>&, const Tensor<float>&,
                                                         std::size_t, double, const EdifySpec&);
template BasicPathSample<double> edify_state_and_velocity(const Tensor<double>&,
                                                          const Tensor<double>&, std::size_t,
                                                          double, const EdifySpec&);
template BasicPathSample<float> pf_train_targets(const Tensor<float>&, const Tensor<float>&,
                                                 std::size_t, double, const PyramidalSpec&);
template BasicPathSample<double> pf_train_targets(const Tensor<double>&, const Tensor<double>&,
                                                  std::size_t, double, const PyramidalSpec&);

}  // namespace lapflow
