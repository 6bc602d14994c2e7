// SPDX-License-Identifier: Apache-2.0
#include "timepro/ssm.hpp"

namespace timepro::ssm {

DiscreteTensors discretize(const Tensor& a, const Tensor& b, const Tensor& delta) {
  if (b.shape() != delta.shape()) throw ShapeError("discretize: B and delta shapes differ");
  if ((delta.data() <= 0.0).any()) throw std::domain_error("discretize: delta must be positive");
  const Tensor z = mul_bcast(delta, a);
  return {exp(z), mul(mul(delta, expm1_ratio(z)), b)};
}

Tensor scan_states(const Tensor& x, const Tensor& a, const Tensor& b, const Tensor& delta,
                   bool reverse) {
  if (x.rank() != 3) throw ShapeError("scan expects x as [outer, seq, chan]");
  if (b.shape() != x.shape() || delta.shape() != x.shape()) {
    throw ShapeError("scan: per-token parameters " + to_string(b.shape()) + "/" +
                     to_string(delta.shape()) + " do not match x " + to_string(x.shape()));
  }
  const DiscreteTensors d = discretize(a, b, delta);
  return linear_recurrence(d.a_bar, mul(d.b_bar, x), reverse);
}

ScanOutput selective_scan(const Tensor& x, const Tensor& a, const Tensor& b, const Tensor& c,
                          const Tensor& delta, const Tensor& d_skip, bool reverse) {
  if (c.shape() != x.shape()) throw ShapeError("scan: C does not match x");
  Tensor states = scan_states(x, a, b, delta, reverse);
  Tensor y = mul(c, states);
  if (d_skip.defined()) y = add(y, mul_bcast(x, d_skip));
  return {std::move(y), std::move(states)};
}

}  // namespace timepro::ssm
