// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "timepro/tensor.hpp"

#include <functional>
#include <span>

namespace timepro {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;  // number of scalar entries compared
  std::size_t worst_input = 0;
  Index worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

enum class Stencil {
  central2,  // (f(x+h) - f(x-h)) / 2h
  central4,  // (f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h
};

struct GradCheckOptions {
  double step = 1e-5;
  Stencil stencil = Stencil::central2;
  Index max_entries_per_input = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Relative error per entry is |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
///
/// `inputs` must be leaves; their values are perturbed in place and restored.
/// `max_entries_per_input` > 0 checks an evenly strided subset of each input.
GradCheckReport grad_check(const std::function<Tensor()>& loss, std::span<Tensor> inputs,
                           double step = 1e-5, Index max_entries_per_input = 0);
GradCheckReport grad_check(const std::function<Tensor()>& loss, std::span<Tensor> inputs,
                           const GradCheckOptions& options);

/// Single-input form: f is evaluated on a leaf copy of `x`.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double step = 1e-5);

}  // namespace timepro
