#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lapflow/flowtrain.hpp"
#include "lapflow/rng.hpp"
#include "lapflow/sampler.hpp"
#include "lapflow/schedule.hpp"

namespace lapflow {

// The single-scale flow-matching baseline is LapFlowObjective and
// lapflow_sample with a one-scale schedule.

/// Data-mean schedule mu(x1, t) = m(t) * Down(x1, 2^k) with m(0) = 0, m(1) = 1.
enum class MeanSchedule { linear, smoothstep };

MeanSchedule parse_mean_schedule(const std::string& name);
std::string to_string(MeanSchedule m);

/// EdifyImage flow: critical times from the schedule (path is ignored).
struct EdifySpec {
  ScheduleSpec schedule;
  MeanSchedule mean = MeanSchedule::linear;

  std::size_t stages() const noexcept { return schedule.scales; }
  void validate() const;
};

template <typename T>
struct BasicPathSample {
  Tensor<T> x;
  Tensor<T> u;
};
using PathSample = BasicPathSample<float>;

/// x = (1-t) Down(x0, 2^k) + m(t) Down(x1, 2^k) and its t-derivative, for t
/// in [T(k+1), 1].
template <typename T>
BasicPathSample<T> edify_state_and_velocity(const Tensor<T>& x1, const Tensor<T>& x0_full,
                                            std::size_t k, double t, const EdifySpec& spec);

/// Stage k uniform, t uniform on [T(k+1), 1], full-resolution noise from the
/// "noise" stream. The model is a one-scale stage-token model.
class EdifyObjective final : public Objective {
 public:
  explicit EdifyObjective(EdifySpec spec);
  std::string name() const override { return "edify"; }
  TrainExample<float> make(const Tensor<float>& x1, Rng& rng) const override;
  std::size_t stages() const override { return spec_.stages(); }

 private:
  EdifySpec spec_;
};

/// Coarse-to-fine integration with a re-noise jump between stages:
/// x(k-1) = Up(x(k)) + (1 - T_k)(Down(x0, 2^(k-1)) - Up(Down(x0, 2^k))).
SampleOutput edify_sample(const MoTModel<float>& model, const EdifySpec& spec,
                          const Tensor<float>& x0_full, const Guidance& guidance,
                          const SolverConfig& solver);

/// PyramidalFlow stages tiling [0, 1]: stage k runs from s_k to e_k, with
/// e_0 = 1, s_{K-1} = 0 and s_{k-1} = e_k.
struct PyramidalSpec {
  std::vector<double> starts;
  std::vector<double> ends;

  /// s_k = T(k+1), e_k = T(k).
  static PyramidalSpec from_schedule(const ScheduleSpec& schedule);
  std::size_t stages() const noexcept { return starts.size(); }
  void validate() const;
};

/// Interpolation between the stage start x_s = s Up(Down(x1, 2^(k+1))) + (1-s) x0k
/// and end x_e = e Down(x1, 2^k) + (1-e) x0k, with x0k = Down(x0, 2^k). The
/// target is the constant (x_e - x_s) / (e - s).
template <typename T>
BasicPathSample<T> pf_train_targets(const Tensor<T>& x1, const Tensor<T>& x0_full, std::size_t k,
                                    double t, const PyramidalSpec& spec);

class PyramidalObjective final : public Objective {
 public:
  explicit PyramidalObjective(PyramidalSpec spec);
  std::string name() const override { return "pyramidal"; }
  TrainExample<float> make(const Tensor<float>& x1, Rng& rng) const override;
  std::size_t stages() const override { return spec_.stages(); }

 private:
  PyramidalSpec spec_;
};

/// Start of stage k-1 from the end state of stage k. `algorithmic` adds
/// (1 - s_prev)(Down(x0, 2^(k-1)) - Up(Down(x0, 2^k))); `variance_matched`
/// adds (1 - s_prev) * sqrt(3 / 4^k) * m with m = sqrt(4/3)(e - Up(Down(e)))
/// for fresh unit noise e drawn from `rng`.
Tensor<float> pf_jump(const Tensor<float>& x_end, const Tensor<float>& x0_full, std::size_t k,
                      double s_prev, PfJump mode, Rng& rng);

/// Stage K-1 starts from `initial` (variance 1/4^(K-1) at the coarsest grid).
/// Returns the finest terminal state.
SampleOutput pf_sample(const MoTModel<float>& model, const PyramidalSpec& spec,
                       const Tensor<float>& x0_full, const Tensor<float>& initial, PfJump mode,
                       Rng& jump_rng, const Guidance& guidance, const SolverConfig& solver);

}  // namespace lapflow
