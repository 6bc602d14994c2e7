// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "timepro/tensor.hpp"

#include <optional>
#include <span>

namespace timepro {

// Shape manipulation. `reshape` shares storage with its input.
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose_last2(const Tensor& x);
Tensor slice_last(const Tensor& x, Index begin, Index count);
Tensor concat_last(const Tensor& a, const Tensor& b);
/// Repeats a trailing axis of length 1 `count` times.
Tensor expand_last(const Tensor& x, Index count);

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
/// log(1 + e^x), stable for large |x|.
Tensor softplus(const Tensor& x);
/// (e^x - 1) / x with the removable singularity at 0 filled by its series.
Tensor expm1_ratio(const Tensor& x);

/// `b` broadcast over the leading axes of `x`; b's shape must equal x's trailing axes.
Tensor add_bcast(const Tensor& x, const Tensor& b);
Tensor mul_bcast(const Tensor& x, const Tensor& b);
/// x viewed as rows of its last axis; row r becomes x_r * scale[r] + shift[r].
/// The affine coefficients are constants.
Tensor row_affine(const Tensor& x, const Array& scale, const Array& shift);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over the last axis, which is removed.
Tensor mean_last(const Tensor& x);
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation along the last axis with zero padding.
/// x: [C, T] or [batch, C, T]; kernel: [C_out, C, k]; bias: [C_out].
Tensor conv1d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
              Index padding);

/// Normalizes over the last axis, then applies per-feature gain and offset.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps = 1e-5);

/// h_s = decay_s * h_{s-1} + input_s along axis 1 of [outer, seq, feat], h_{-1} = 0.
/// With `reverse`, the recurrence runs from the last sequence index to the first.
Tensor linear_recurrence(const Tensor& decay, const Tensor& input, bool reverse = false);

/// Linear interpolation of values[T] at a fractional coordinate held in a
/// scalar tensor; coordinates outside [0, T-1] are clamped to the border.
Tensor linear_interp1d(const Tensor& values, const Tensor& coord);

/// Batched interpolated gather along the middle axis.
/// values: [R, P, C]; offsets: [R, P, M]; base: M reference displacements.
/// out[r, p, c, m] = interp(values[r, :, c], clamp(p + base[m] + offsets[r, p, m])),
/// plus values[r, p, c] when `residual` is set.
Tensor deformable_sample(const Tensor& values, const Tensor& offsets, std::span<const double> base,
                         bool residual = false);

/// Clamped sampling coordinate shared by the interpolation ops.
struct InterpPoint {
  Index lo = 0;
  Index hi = 0;
  double frac = 0.0;
  bool clamped = false;
};
InterpPoint interp_point(double coord, Index length);

}  // namespace timepro
