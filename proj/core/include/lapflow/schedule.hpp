#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "lapflow/rng.hpp"
#include "lapflow/tensor.hpp"

namespace lapflow {

enum class PathKind { linear, gvp, poly2, poly3 };

PathKind parse_path(std::string_view name);
std::string to_string(PathKind kind);

/// Critical time points and interpolation family of a K-scale flow.
/// Scale k is active on [T(k+1), 1] with T(0) = 1 and T(K) = 0.
struct ScheduleSpec {
  std::size_t scales = 1;
  /// T_1 > T_2 > ... > T_{K-1}, finest scale first.
  std::vector<double> critical_times;
  PathKind path = PathKind::linear;
  /// Noise each pyramid level with its own unit normal instead of decomposing
  /// a single full-resolution draw.
  bool independent_scale_noise = false;

  /// Evenly spaced critical times T_k = (K - k) / K: 0.5 for K = 2 and
  /// (2/3, 1/3) for K = 3.
  static ScheduleSpec uniform(std::size_t scales, PathKind path = PathKind::linear);

  double critical(std::size_t k) const;
  /// Activation time of scale k, i.e. T(k+1).
  double start(std::size_t k) const { return critical(k + 1); }

  /// Throws ConfigError if the ordering 0 < T_{K-1} < ... < T_1 < 1 fails.
  void validate() const;

  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

struct PathCoeffs {
  double alpha = 0.0;
  double sigma = 0.0;
  double dalpha = 0.0;
  double dsigma = 0.0;
};

/// alpha, sigma and their time derivatives for scale k at time t.
/// t below the activation time of scale k is a DomainError.
PathCoeffs coeffs(const ScheduleSpec& spec, std::size_t k, double t);

/// alpha * x1 + sigma * x0
template <typename T>
Tensor<T> noisy_state(const Tensor<T>& x1, const Tensor<T>& x0, const PathCoeffs& c);

/// dalpha * x1 + dsigma * x0
template <typename T>
Tensor<T> velocity_target(const Tensor<T>& x1, const Tensor<T>& x0, const PathCoeffs& c);

struct StageTime {
  std::size_t stage = 0;
  double t = 0.0;
};

/// Stage s uniform over {0, ..., K-1}, then t uniform on the closed interval [T(s+1), 1].
StageTime sample_stage_time(Rng& rng, const ScheduleSpec& spec);

}  // namespace lapflow
