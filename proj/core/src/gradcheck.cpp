#include "lapflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace lapflow {
namespace {

double evaluate(const MultiScalarFn& f, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape(false);
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) vars.push_back(tape.borrow(in, false));
  const Var<double> out = f(tape, vars);
  if (out.value().size() != 1) throw DimensionError("grad_check: function must be scalar");
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const MultiScalarFn& f, std::vector<Tensor<double>> inputs, double h) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& in : inputs) vars.push_back(tape.borrow(in));
    Var<double> out = f(tape, vars);
    Gradients<double> grads = tape.backward(out);
    for (const auto& v : vars) analytic.push_back(grads.take(v));
  }

  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double saved = inputs[i][j];
      inputs[i][j] = saved + h;
      const double fp = evaluate(f, inputs);
      inputs[i][j] = saved - h;
      const double fm = evaluate(f, inputs);
      inputs[i][j] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i][j];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = i;
        report.worst_index = j;
      }
      ++report.coordinates;
    }
  }
  return report;
}

double grad_check(const ScalarFn& f, const Tensor<double>& x, double h) {
  MultiScalarFn wrapped = [&f](Tape<double>& tape, std::span<const Var<double>> vars) {
    return f(tape, vars[0]);
  };
  return grad_check(wrapped, std::vector<Tensor<double>>{x}, h).max_rel_error;
}

}  // namespace lapflow
