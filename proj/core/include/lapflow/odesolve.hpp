#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace lapflow {

enum class SolverKind { euler, heun, dopri5 };

SolverKind parse_solver(std::string_view name);
std::string to_string(SolverKind kind);

struct SolverConfig {
  SolverKind kind = SolverKind::dopri5;
  double rtol = 1e-5;
  double atol = 1e-5;
  /// Step count of the fixed-step solvers.
  std::size_t steps = 100;
  /// Adaptive steps below this size abort the integration.
  double min_step = 1e-12;
  std::size_t max_steps = 100000;

  void validate() const;
};

/// dy/dt = f(t, y); writes into `dydt`, which has the size of `y`.
using OdeFn = std::function<void(double t, const std::vector<double>& y, std::vector<double>& dydt)>;

struct OdeResult {
  std::vector<double> y;
  std::size_t nfe = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

/// Integrates from t_start to t_end (t_start < t_end) and returns the state at
/// exactly t_end. Fixed-step solvers take uniform steps; dopri5 uses the
/// embedded 5(4) Dormand-Prince pair with PI step control and FSAL, so that
/// nfe == 1 + 6 * (accepted + rejected).
OdeResult odeint(const OdeFn& f, double t_start, double t_end, std::vector<double> y0,
                 const SolverConfig& config);

/// max_i |a_i - b_i| between the terminal states of two solver runs.
double solver_agreement(const OdeFn& f, double t_start, double t_end,
                        const std::vector<double>& y0, const SolverConfig& a,
                        const SolverConfig& b);

}  // namespace lapflow
