#include "lapflow/odesolve.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lapflow/error.hpp"

namespace lapflow {

SolverKind parse_solver(std::string_view name) {
  if (name == "euler") return SolverKind::euler;
  if (name == "heun") return SolverKind::heun;
  if (name == "dopri5") return SolverKind::dopri5;
  throw ConfigError("solver.kind",
                    "unknown solver '" + std::string(name) + "' (expected euler, heun or dopri5)");
}

std::string to_string(SolverKind kind) {
  switch (kind) {
    case SolverKind::euler: return "euler";
    case SolverKind::heun: return "heun";
    case SolverKind::dopri5: return "dopri5";
  }
  return "dopri5";
}

void SolverConfig::validate() const {
  if (!(rtol > 0.0)) throw ConfigError("solver.rtol", "must be positive");
  if (!(atol > 0.0)) throw ConfigError("solver.atol", "must be positive");
  if (steps == 0) throw ConfigError("solver.steps", "must be positive");
  if (!(min_step > 0.0)) throw ConfigError("solver.min_step", "must be positive");
  if (max_steps == 0) throw ConfigError("solver.max_steps", "must be positive");
}

namespace {

using Vec = std::vector<double>;

// y_out = y + h * sum_j a_j k_j
void combine(const Vec& y, double h, std::initializer_list<std::pair<double, const Vec*>> terms,
             Vec& out) {
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (const auto& [a, k] : terms) acc += a * (*k)[i];
    out[i] = y[i] + h * acc;
  }
}

OdeResult fixed_step(const OdeFn& f, double t0, double t1, Vec y, const SolverConfig& cf) {
  OdeResult res;
  const std::size_t n = y.size();
  Vec k1(n), k2(n), tmp(n);
  const double h = (t1 - t0) / static_cast<double>(cf.steps);
  for (std::size_t s = 0; s < cf.steps; ++s) {
    const double t = t0 + static_cast<double>(s) * h;
    const double hs = (s + 1 == cf.steps) ? t1 - t : h;
    f(t, y, k1);
    ++res.nfe;
    if (cf.kind == SolverKind::euler) {
      for (std::size_t i = 0; i < n; ++i) y[i] += hs * k1[i];
    } else {
      for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + hs * k1[i];
      f(t + hs, tmp, k2);
      ++res.nfe;
      for (std::size_t i = 0; i < n; ++i) y[i] += 0.5 * hs * (k1[i] + k2[i]);
    }
    ++res.accepted;
  }
  res.y = std::move(y);
  return res;
}

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
// Difference between the 5th- and 4th-order weights.
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;


OdeResult dopri5(const OdeFn& f, double t0, double t1, Vec y, const SolverConfig& cf) {
  OdeResult res;
  const std::size_t n = y.size();
  Vec k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), ynew(n);
  f(t0, y, k1);
  ++res.nfe;

  // Initial step from the state and slope magnitudes (first stage of the
  // usual heuristic, which needs no extra evaluation).
  Vec scale(n);
  for (std::size_t i = 0; i < n; ++i) scale[i] = std::max(cf.atol, cf.rtol * std::abs(y[i]));
  double d0 = 0.0, d1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d0 += (y[i] / scale[i]) * (y[i] / scale[i]);
    d1 += (k1[i] / scale[i]) * (k1[i] / scale[i]);
  }
  d0 = n ? std::sqrt(d0 / n) : 0.0;
  d1 = n ? std::sqrt(d1 / n) : 0.0;
  const double span = t1 - t0;
  double h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h = std::min(h, span);

  constexpr double safety = 0.9, min_factor = 0.2, max_factor = 10.0;
  constexpr double beta = 0.04, alpha = 0.2 - 0.75 * beta;
  double prev_err = 1e-4;
  double t = t0;
  std::size_t iterations = 0;
  while (t < t1) {
    if (++iterations > cf.max_steps) {
      std::ostringstream os;
      os << "dopri5 exceeded " << cf.max_steps << " steps; last accepted t = " << t;
      throw DivergenceError(os.str());
    }
    const bool last = t + h >= t1 || (t1 - (t + h)) < 1e-12 * std::max(1.0, std::abs(t1));
    const double hs = last ? t1 - t : h;
    if (hs < cf.min_step && !last) {
      std::ostringstream os;
      os << "dopri5 step size underflow (h = " << hs << "); last accepted t = " << t;
      throw DivergenceError(os.str());
    }
    combine(y, hs, {{a21, &k1}}, tmp);
    f(t + c2 * hs, tmp, k2);
    combine(y, hs, {{a31, &k1}, {a32, &k2}}, tmp);
    f(t + c3 * hs, tmp, k3);
    combine(y, hs, {{a41, &k1}, {a42, &k2}, {a43, &k3}}, tmp);
    f(t + c4 * hs, tmp, k4);
    combine(y, hs, {{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}}, tmp);
    f(t + c5 * hs, tmp, k5);
    combine(y, hs, {{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}}, tmp);
    f(t + hs, tmp, k6);
    combine(y, hs, {{b1, &k1}, {b3, &k3}, {b4, &k4}, {b5, &k5}, {b6, &k6}}, ynew);
    f(t + hs, ynew, k7);
    res.nfe += 6;

    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = hs * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                             e7 * k7[i]);
      const double sc = std::max(cf.atol, cf.rtol * std::max(std::abs(y[i]), std::abs(ynew[i])));
      err += (e / sc) * (e / sc);
    }
    err = n ? std::sqrt(err / n) : 0.0;
    if (!std::isfinite(err)) {
      std::ostringstream os;
      os << "dopri5 produced non-finite values; last accepted t = " << t;
      throw DivergenceError(os.str());
    }

    if (err <= 1.0) {
      t = last ? t1 : t + hs;
      y.swap(ynew);
      k1.swap(k7);
      ++res.accepted;
      double factor = err == 0.0 ? max_factor
                                 : safety * std::pow(err, -alpha) * std::pow(prev_err, beta);
      factor = std::clamp(factor, min_factor, max_factor);
      prev_err = std::max(err, 1e-4);
      h = hs * factor;
    } else {
      ++res.rejected;
      const double factor = std::max(min_factor, safety * std::pow(err, -alpha));
      h = hs * factor;
    }
  }
  res.y = std::move(y);
  return res;
}

}  // namespace

OdeResult odeint(const OdeFn& f, double t_start, double t_end, std::vector<double> y0,
                 const SolverConfig& config) {
  config.validate();
  if (!(t_start < t_end)) {
    throw DomainError("odeint: need t_start < t_end, got [" + std::to_string(t_start) + ", " +
                      std::to_string(t_end) + "]");
  }
  if (config.kind == SolverKind::dopri5) return dopri5(f, t_start, t_end, std::move(y0), config);
  return fixed_step(f, t_start, t_end, std::move(y0), config);
}

double solver_agreement(const OdeFn& f, double t_start, double t_end,
                        const std::vector<double>& y0, const SolverConfig& a,
                        const SolverConfig& b) {
  const auto ra = odeint(f, t_start, t_end, y0, a);
  const auto rb = odeint(f, t_start, t_end, y0, b);
  double m = 0.0;
  for (std::size_t i = 0; i < ra.y.size(); ++i) m = std::max(m, std::abs(ra.y[i] - rb.y[i]));
  return m;
}

}  // namespace lapflow
