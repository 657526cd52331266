#pragma once

#include <functional>
#include <span>
#include <vector>

#include "lapflow/tape.hpp"

namespace lapflow {

struct GradCheckReport {
  /// max over coordinates of |analytic - central difference| / max(1, |analytic|)
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

using MultiScalarFn =
    std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;
using ScalarFn = std::function<Var<double>(Tape<double>&, Var<double>)>;

/// Compares reverse-mode gradients against central finite differences of
/// step `h`, over every coordinate of every input.
GradCheckReport grad_check(const MultiScalarFn& f, std::vector<Tensor<double>> inputs,
                           double h = 1e-5);

double grad_check(const ScalarFn& f, const Tensor<double>& x, double h = 1e-5);

}  // namespace lapflow
