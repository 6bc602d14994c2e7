// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "timepro/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace timepro::ssm {

template <typename Scalar>
using SeqArray = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;  // seq x chan
template <typename Scalar>
using ChanArray = Eigen::Array<Scalar, 1, Eigen::Dynamic>;  // 1 x chan

/// Zero-order-hold input gain (e^{dA} - 1) / A for one scalar pair, i.e. the
/// integral of e^{As} over [0, delta]. Near dA = 0 the series delta(1 + dA/2 + ...)
/// replaces the removable singularity.
template <typename Scalar>
Scalar zoh_gain(Scalar a, Scalar delta) {
  const Scalar z = a * delta;
  if (std::abs(z) < Scalar(1e-6)) return delta * (Scalar(1) + z / Scalar(2) + z * z / Scalar(6));
  return std::expm1(z) / a;
}

template <typename Scalar>
struct Discrete {
  SeqArray<Scalar> a_bar;
  SeqArray<Scalar> b_bar;
};

/// Continuous (A, B, delta) to discrete (A_bar, B_bar) for diagonal A with one
/// state per channel. A is per channel; B and delta are per token and channel.
template <typename Scalar>
Discrete<Scalar> discretize(const ChanArray<Scalar>& a, const SeqArray<Scalar>& b,
                            const SeqArray<Scalar>& delta) {
  if (b.cols() != a.cols() || delta.rows() != b.rows() || delta.cols() != b.cols()) {
    throw ShapeError("discretize: A, B and delta disagree on shape");
  }
  if ((delta <= Scalar(0)).any()) throw std::domain_error("discretize: delta must be positive");
  Discrete<Scalar> out{SeqArray<Scalar>(b.rows(), b.cols()), SeqArray<Scalar>(b.rows(), b.cols())};
  for (Index t = 0; t < b.rows(); ++t) {
    for (Index c = 0; c < b.cols(); ++c) {
      out.a_bar(t, c) = std::exp(delta(t, c) * a(c));
      out.b_bar(t, c) = zoh_gain(a(c), delta(t, c)) * b(t, c);
    }
  }
  return out;
}

/// All parameters of a single-state-per-channel selective SSM over one sequence.
template <typename Scalar>
struct SsmParams {
  ChanArray<Scalar> a;       // evolution, < 0 for stable decay
  SeqArray<Scalar> delta;    // > 0
  SeqArray<Scalar> b;
  SeqArray<Scalar> c;
  ChanArray<Scalar> d_skip;  // empty when the skip term is off
  SeqArray<Scalar> a_bar;    // filled by discretize_in_place
  SeqArray<Scalar> b_bar;

  void discretize_in_place() {
    auto d = discretize<Scalar>(a, b, delta);
    a_bar = std::move(d.a_bar);
    b_bar = std::move(d.b_bar);
  }
};

template <typename Scalar>
struct ScanResult {
  SeqArray<Scalar> y;
  SeqArray<Scalar> states;
};

/// Sequential recurrence h_t = A_bar_t h_{t-1} + B_bar_t x_t with h_{-1} = 0,
/// y_t = C_t h_t (+ D x_t). Every intermediate state is returned.
template <typename Scalar>
ScanResult<Scalar> selective_scan(const SeqArray<Scalar>& x, const SsmParams<Scalar>& p) {
  const Index seq = x.rows();
  const Index chan = x.cols();
  auto same = [&](const SeqArray<Scalar>& m) { return m.rows() == seq && m.cols() == chan; };
  if (!same(p.a_bar) || !same(p.b_bar) || !same(p.c)) {
    throw ShapeError("selective_scan: per-token parameters do not match x");
  }
  if (p.d_skip.size() != 0 && p.d_skip.cols() != chan) {
    throw ShapeError("selective_scan: skip term has the wrong width");
  }
  ScanResult<Scalar> r{SeqArray<Scalar>(seq, chan), SeqArray<Scalar>(seq, chan)};
  ChanArray<Scalar> h = ChanArray<Scalar>::Zero(chan);
  for (Index t = 0; t < seq; ++t) {
    h = p.a_bar.row(t) * h + p.b_bar.row(t) * x.row(t);
    r.states.row(t) = h;
    r.y.row(t) = p.c.row(t) * h;
    if (p.d_skip.size() != 0) r.y.row(t) += p.d_skip * x.row(t);
  }
  return r;
}

/// Convolution kernel taps K[k, c] = C_c A_bar_c^k B_bar_c for static parameters.
template <typename Scalar>
SeqArray<Scalar> ssm_kernel(const ChanArray<Scalar>& a_bar, const ChanArray<Scalar>& b_bar,
                            const ChanArray<Scalar>& c, Index length) {
  if (length < 1) throw std::invalid_argument("ssm_kernel: length must be >= 1");
  if (b_bar.cols() != a_bar.cols() || c.cols() != a_bar.cols()) {
    throw ShapeError("ssm_kernel: parameter widths differ");
  }
  SeqArray<Scalar> taps(length, a_bar.cols());
  ChanArray<Scalar> power = ChanArray<Scalar>::Ones(a_bar.cols());
  for (Index k = 0; k < length; ++k) {
    taps.row(k) = c * power * b_bar;
    power *= a_bar;
  }
  return taps;
}

/// Causal convolution y_t = sum_{k <= t} K_k x_{t-k}, channel by channel.
template <typename Scalar>
SeqArray<Scalar> apply_kernel(const SeqArray<Scalar>& taps, const SeqArray<Scalar>& x) {
  if (taps.cols() != x.cols() || taps.rows() < x.rows()) {
    throw ShapeError("apply_kernel: kernel shorter than input or width mismatch");
  }
  SeqArray<Scalar> y = SeqArray<Scalar>::Zero(x.rows(), x.cols());
  for (Index t = 0; t < x.rows(); ++t) {
    for (Index k = 0; k <= t; ++k) y.row(t) += taps.row(k) * x.row(t - k);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Differentiable forms over [outer, seq, chan] tensors. `a` is [chan] (or any
// trailing shape of the token tensors) and broadcasts over the leading axes.

struct DiscreteTensors {
  Tensor a_bar;
  Tensor b_bar;
};

DiscreteTensors discretize(const Tensor& a, const Tensor& b, const Tensor& delta);

/// Hidden states of the recurrence; the output projection is not applied.
Tensor scan_states(const Tensor& x, const Tensor& a, const Tensor& b, const Tensor& delta,
                   bool reverse = false);

struct ScanOutput {
  Tensor y;
  Tensor states;
};

/// y = C * h (+ d_skip * x when d_skip is defined).
ScanOutput selective_scan(const Tensor& x, const Tensor& a, const Tensor& b, const Tensor& c,
                          const Tensor& delta, const Tensor& d_skip, bool reverse = false);

}  // namespace timepro::ssm
