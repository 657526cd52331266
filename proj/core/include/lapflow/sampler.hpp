#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lapflow/model.hpp"
#include "lapflow/odesolve.hpp"
#include "lapflow/pyramid.hpp"
#include "lapflow/schedule.hpp"

namespace lapflow {

/// Class label and classifier-free guidance weight of one sample.
struct Guidance {
  std::optional<std::size_t> label;
  /// 1 disables guidance.
  double scale = 1.0;
};

/// v_null + w * (v_label - v_null) on every active scale. w = 1 is a single
/// conditional forward and w = 0 a single null-label forward.
std::vector<Tensor<float>> cfg_velocity(const MoTModel<float>& model, const FlowState<float>& state,
                                        std::optional<std::size_t> label, double w);

/// Solver statistics of one ODE segment.
struct SegmentStats {
  std::size_t segment = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  std::size_t nfe = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

struct SampleOutput {
  Tensor<float> image;
  std::vector<SegmentStats> segments;

  std::size_t nfe() const;
};

/// Integrates levels [first, K) of `levels` in place from t_start to t_end.
/// A stage-token model receives `stage`. DivergenceError messages carry the
/// segment index.
SegmentStats integrate_levels(const MoTModel<float>& model, std::vector<Tensor<float>>& levels,
                              std::size_t first, std::optional<std::size_t> stage, double t_start,
                              double t_end, const Guidance& guidance, const SolverConfig& solver,
                              std::size_t segment);

/// Segmented multi-scale sampling from a noise pyramid. Segment j = K-1, ..., 0
/// integrates scales j..K-1 over [T(j+1), T(j)]; scale j enters at
/// sigma_j(T(j+1)) * noise_j. The image is the pyramid reconstruction.
SampleOutput lapflow_sample(const MoTModel<float>& model, const ScheduleSpec& spec,
                            const Pyramid<float>& noise, const Guidance& guidance,
                            const SolverConfig& solver);

enum class PfJump { algorithmic, variance_matched };

PfJump parse_pf_jump(const std::string& name);
std::string to_string(PfJump mode);

/// Batch sampling from a checkpoint of any method.
struct SampleConfig {
  std::string checkpoint;
  std::size_t count = 16;
  std::uint64_t seed = 0;
  double cfg_scale = 1.0;
  /// One label for all samples, or cycled over the batch. Empty on a
  /// conditional model cycles through the classes.
  std::vector<std::size_t> labels;
  SolverConfig solver;
  bool use_ema = true;
  PfJump pf_jump = PfJump::algorithmic;

  void validate() const;
};

struct SampleBatch {
  std::string method;
  std::vector<Tensor<float>> images;
  std::vector<std::optional<std::size_t>> labels;
  /// Per-sample segment statistics.
  std::vector<std::vector<SegmentStats>> segments;
  double seconds = 0.0;
};

struct Checkpoint;

/// Sample i draws all noise from Rng(seed).stream("sample").substream(i).
SampleBatch sample(const Checkpoint& ckpt, const SampleConfig& config);
SampleBatch sample(const SampleConfig& config);

}  // namespace lapflow
