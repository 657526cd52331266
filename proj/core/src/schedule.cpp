#include "lapflow/schedule.hpp"

#include <cmath>
#include <numbers>

#include "lapflow/error.hpp"

namespace lapflow {

PathKind parse_path(std::string_view name) {
  if (name == "linear") return PathKind::linear;
  if (name == "gvp") return PathKind::gvp;
  if (name == "poly2") return PathKind::poly2;
  if (name == "poly3") return PathKind::poly3;
  throw ConfigError("schedule.path", "unknown path '" + std::string(name) +
                                         "' (expected linear, gvp, poly2 or poly3)");
}

std::string to_string(PathKind kind) {
  switch (kind) {
    case PathKind::linear: return "linear";
    case PathKind::gvp: return "gvp";
    case PathKind::poly2: return "poly2";
    case PathKind::poly3: return "poly3";
  }
  return "linear";
}

ScheduleSpec ScheduleSpec::uniform(std::size_t scales, PathKind path) {
  ScheduleSpec spec;
  spec.scales = scales;
  spec.path = path;
  for (std::size_t k = 1; k < scales; ++k) {
    spec.critical_times.push_back(static_cast<double>(scales - k) / static_cast<double>(scales));
  }
  return spec;
}

double ScheduleSpec::critical(std::size_t k) const {
  if (k == 0) return 1.0;
  if (k >= scales) return 0.0;
  return critical_times[k - 1];
}

void ScheduleSpec::validate() const {
  if (scales == 0) throw ConfigError("schedule.scales", "must be at least 1");
  if (critical_times.size() + 1 != scales) {
    throw ConfigError("schedule.critical_times",
                      "expected " + std::to_string(scales - 1) + " values for " +
                          std::to_string(scales) + " scales, got " +
                          std::to_string(critical_times.size()));
  }
  for (std::size_t k = 0; k < scales; ++k) {
    if (!(critical(k + 1) < critical(k))) {
      throw ConfigError("schedule.critical_times",
                        "critical times must satisfy 0 < T_{K-1} < ... < T_1 < 1");
    }
  }
}

PathCoeffs coeffs(const ScheduleSpec& spec, std::size_t k, double t) {
  if (k >= spec.scales) {
    throw DomainError("coeffs: scale " + std::to_string(k) + " outside " +
                      std::to_string(spec.scales) + "-scale schedule");
  }
  const double t0 = spec.start(k);
  if (t < t0 || t > 1.0) {
    throw DomainError("coeffs: t = " + std::to_string(t) + " outside [" + std::to_string(t0) +
                      ", 1] for scale " + std::to_string(k));
  }
  const double span = 1.0 - t0;
  const double u = (t - t0) / span;
  constexpr double half_pi = std::numbers::pi / 2.0;
  PathCoeffs c;
  switch (spec.path) {
    case PathKind::linear:
      c.alpha = u;
      c.dalpha = 1.0 / span;
      c.sigma = 1.0 - t;
      c.dsigma = -1.0;
      break;
    case PathKind::gvp:
      c.alpha = std::sin(half_pi * u);
      c.dalpha = std::cos(half_pi * u) * half_pi / span;
      c.sigma = std::cos(half_pi * t);
      c.dsigma = -half_pi * std::sin(half_pi * t);
      break;
    case PathKind::poly2:
      c.alpha = u;
      c.dalpha = 1.0 / span;
      c.sigma = (1.0 - t) * (1.0 - t);
      c.dsigma = -2.0 * (1.0 - t);
      break;
    case PathKind::poly3:
      c.alpha = u;
      c.dalpha = 1.0 / span;
      c.sigma = (1.0 - t) * (1.0 - t) * (1.0 - t);
      c.dsigma = -3.0 * (1.0 - t) * (1.0 - t);
      break;
  }
  return c;
}

namespace {

template <typename T>
Tensor<T> combine(const Tensor<T>& x1, const Tensor<T>& x0, double a, double b, const char* what) {
  require_same_shape(x1.shape(), x0.shape(), what);
  Tensor<T> out(x1.shape());
  const T ta = static_cast<T>(a), tb = static_cast<T>(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta * x1[i] + tb * x0[i];
  return out;
}

}  // namespace

template <typename T>
Tensor<T> noisy_state(const Tensor<T>& x1, const Tensor<T>& x0, const PathCoeffs& c) {
  return combine(x1, x0, c.alpha, c.sigma, "noisy_state");
}

template <typename T>
Tensor<T> velocity_target(const Tensor<T>& x1, const Tensor<T>& x0, const PathCoeffs& c) {
  return combine(x1, x0, c.dalpha, c.dsigma, "velocity_target");
}

StageTime sample_stage_time(Rng& rng, const ScheduleSpec& spec) {
  StageTime st;
  st.stage = static_cast<std::size_t>(rng.uniform_int(spec.scales));
  const double t0 = spec.start(st.stage);
  st.t = t0 + (1.0 - t0) * rng.uniform_closed();
  if (st.t > 1.0) st.t = 1.0;
  return st;
}

template Tensor<float> noisy_state(const Tensor<float>&, const Tensor<float>&, const PathCoeffs&);
template Tensor<double> noisy_state(const Tensor<double>&, const Tensor<double>&, const PathCoeffs&);
template Tensor<float> velocity_target(const Tensor<float>&, const Tensor<float>&, const PathCoeffs&);
template Tensor<double> velocity_target(const Tensor<double>&, const Tensor<double>&,
                                        const PathCoeffs&);

}  // namespace lapflow
