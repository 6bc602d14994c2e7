// SPDX-License-Identifier: Apache-2.0
#include "timepro/grad_check.hpp"

#include <cmath>

namespace timepro {

namespace {

double evaluate(const std::function<Tensor()>& loss) {
  NoGradGuard guard;
  const Tensor value = loss();
  const double v = value.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& loss, std::span<Tensor> inputs,
                           double step, Index max_entries_per_input) {
  return grad_check(loss, inputs, GradCheckOptions{step, Stencil::central2, max_entries_per_input});
}

GradCheckReport grad_check(const std::function<Tensor()>& loss, std::span<Tensor> inputs,
                           const GradCheckOptions& options) {
  const double step = options.step;
  const Index max_entries_per_input = options.max_entries_per_input;
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const Tensor root = loss();
  if (root.numel() != 1) throw ShapeError("grad_check needs a scalar-valued function");
  root.backward();

  GradCheckReport report;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    Tensor& input = inputs[which];
    const Array analytic = input.grad();
    Array& values = input.mutable_data();
    const Index n = values.size();
    const Index stride =
        max_entries_per_input > 0 && n > max_entries_per_input ? n / max_entries_per_input : 1;
    for (Index i = 0; i < n; i += stride) {
      const double saved = values(i);
      auto at = [&](double shift) {
        values(i) = saved + shift;
        return evaluate(loss);
      };
      double numeric = 0.0;
      if (options.stencil == Stencil::central2) {
        numeric = (at(step) - at(-step)) / (2.0 * step);
      } else {
        const double m2 = at(-2 * step);
        const double m1 = at(-step);
        const double p1 = at(step);
        const double p2 = at(2 * step);
        numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
      }
      values(i) = saved;
      const double denom = std::max({std::abs(analytic(i)), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic(i) - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (rel >= report.max_rel_error) {
          report.worst_input = which;
          report.worst_entry = i;
          report.worst_analytic = analytic(i);
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
  Tensor leaf = x.clone(true);
  Tensor inputs[] = {leaf};
  return grad_check([&] { return f(leaf); }, inputs, step).max_rel_error;
}

}  // namespace timepro
