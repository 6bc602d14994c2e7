// SPDX-License-Identifier: Apache-2.0
#include "timepro/hyperscan.hpp"

#include "timepro/ssm.hpp"

#include <cmath>

namespace timepro {

namespace {

constexpr double kInitialDelta = 0.05;

bool uses_var_scan(ScanVariant v) {
  return v == ScanVariant::hyper || v == ScanVariant::var_only || v == ScanVariant::non_adaptive ||
         v == ScanVariant::time_then_var;
}

bool uses_time_scan(ScanVariant v) {
  return v == ScanVariant::time_only || v == ScanVariant::time_then_var;
}

ScanBranchWeights make_branch(ParamStore& store, const std::string& prefix, Index dh,
                              const Shape& channels, bool skip, Rng& rng) {
  ScanBranchWeights w;
  const double bound = 0.1 / std::sqrt(static_cast<double>(dh));
  w.delta_proj.weight = store.add(prefix + ".delta_proj.weight",
                                  Tensor::from({dh, dh}, rng.uniform_array(dh * dh, -bound, bound)));
  // softplus(bias) == kInitialDelta
  w.delta_proj.bias = store.add(prefix + ".delta_proj.bias",
                                Tensor::full({dh}, std::log(std::expm1(kInitialDelta))));
  w.b_proj = make_linear(store, prefix + ".b_proj", dh, 1, false, rng);
  w.c_proj = make_linear(store, prefix + ".c_proj", dh, 1, false, rng);
  w.a_log = store.add(prefix + ".a_log", Tensor::zeros(channels));
  if (skip) w.d_skip = store.add(prefix + ".d_skip", Tensor::full(channels, 1.0));
  return w;
}

HyperScanWeights make_scan_weights(ParamStore& store, const std::string& prefix,
                                   const HyperMambaOptions& opt, Rng& rng) {
  HyperScanWeights w;
  const Index dh = opt.half_dim();
  const Index p = opt.patches;
  const Index m = opt.n_samples;
  if (uses_var_scan(opt.variant)) {
    w.var_scan = make_branch(store, prefix + ".var_scan", dh, {p, dh}, opt.skip_term, rng);
  }
  if (opt.variant == ScanVariant::hyper) {
    if (opt.adaptive_time_tune) {
      const double b1 = 1.0 / std::sqrt(3.0);
      w.tune.offset_conv1_w = store.add(prefix + ".tune.offset_conv1.weight",
                                        Tensor::from({2 * m, 1, 3}, rng.uniform_array(6 * m, -b1, b1)));
      w.tune.offset_conv1_b = store.add(prefix + ".tune.offset_conv1.bias",
                                        Tensor::from({2 * m}, rng.uniform_array(2 * m, -b1, b1)));
      w.tune.offset_conv2_w = store.add(prefix + ".tune.offset_conv2.weight", Tensor::zeros({m, 2 * m, 3}));
      w.tune.offset_conv2_b = store.add(prefix + ".tune.offset_conv2.bias", Tensor::zeros({m}));
    }
    Array onehot = Array::Zero(m);
    onehot((m - 1) / 2) = 1.0;
    w.tune.fuse_w = store.add(prefix + ".tune.fuse.weight", Tensor::from({m, 1}, onehot));
    w.tune.fuse_b = store.add(prefix + ".tune.fuse.bias", Tensor::zeros({1}));
  }
  if (opt.variant == ScanVariant::non_adaptive) {
    Array identity = Array::Zero(p * p);
    for (Index i = 0; i < p; ++i) identity(i * p + i) = 1.0;
    w.time_mix = store.add(prefix + ".time_mix", Tensor::from({p, p}, std::move(identity)));
  }
  if (uses_time_scan(opt.variant)) {
    w.time_scan = make_branch(store, prefix + ".time_scan", dh, {dh}, opt.skip_term, rng);
  }
  return w;
}

Tensor mix_over_patches(const Tensor& h, const Tensor& mix) {
  const Index r = h.dim(0);
  const Index p = h.dim(1);
  const Index dh = h.dim(2);
  Tensor rows = reshape(transpose_last2(h), {r * dh, p});
  return transpose_last2(reshape(matmul(rows, mix), {r, dh, p}));
}

}  // namespace

std::string_view to_string(ScanVariant v) {
  switch (v) {
    case ScanVariant::hyper: return "hyper";
    case ScanVariant::var_only: return "var_only";
    case ScanVariant::time_only: return "time_only";
    case ScanVariant::time_then_var: return "time_then_var";
    case ScanVariant::non_adaptive: return "non_adaptive";
    case ScanVariant::none: return "none";
  }
  return "unknown";
}

ScanVariant parse_scan_variant(std::string_view name) {
  for (ScanVariant v : {ScanVariant::hyper, ScanVariant::var_only, ScanVariant::time_only,
                        ScanVariant::time_then_var, ScanVariant::non_adaptive, ScanVariant::none}) {
    if (to_string(v) == name) return v;
  }
  if (name == "baseline") return ScanVariant::none;
  throw Error("unknown scan variant '" + std::string(name) + "'");
}

void HyperMambaOptions::validate() const {
  if (embed_dim < 2 || embed_dim % 2 != 0) {
    throw ShapeError("HyperMamba needs an even embedding width, got " + std::to_string(embed_dim));
  }
  if (patches < 1) throw ShapeError("HyperMamba needs at least one patch");
  if (n_samples < 1 || n_samples % 2 == 0) {
    throw ShapeError("time-tune needs an odd sample count, got " + std::to_string(n_samples));
  }
}

std::vector<double> base_offsets(Index n_samples) {
  std::vector<double> base(static_cast<std::size_t>(n_samples));
  const double centre = static_cast<double>(n_samples - 1) / 2.0;
  for (Index m = 0; m < n_samples; ++m) base[static_cast<std::size_t>(m)] = static_cast<double>(m) - centre;
  return base;
}

HyperMambaWeights make_hypermamba_weights(ParamStore& store, const std::string& prefix,
                                          const HyperMambaOptions& opt, Rng& rng) {
  opt.validate();
  if (opt.variant == ScanVariant::none) throw Error("variant 'none' has no HyperMamba weights");
  HyperMambaWeights w;
  w.in_proj_t = make_linear(store, prefix + ".in_proj_t", opt.embed_dim, opt.embed_dim, false, rng);
  w.in_proj_z = make_linear(store, prefix + ".in_proj_z", opt.embed_dim, opt.embed_dim, false, rng);
  w.forward = make_scan_weights(store, prefix + ".fwd", opt, rng);
  w.backward = make_scan_weights(store, prefix + ".bwd", opt, rng);
  return w;
}

TokenParams project_tokens(const ScanBranchWeights& w, const Tensor& x) {
  const Index dh = x.dim(-1);
  return {softplus(w.delta_proj(x)), expand_last(w.b_proj(x), dh), expand_last(w.c_proj(x), dh)};
}

VariableScan variable_scan(const Tensor& x_half, const ScanBranchWeights& w, ScanDirection dir) {
  if (x_half.rank() != 4) throw ShapeError("variable_scan expects [B, N, P, Dh]");
  const Index b = x_half.dim(0);
  const Index n = x_half.dim(1);
  const Index p = x_half.dim(2);
  const Index dh = x_half.dim(3);
  if (n < 1) throw ShapeError("variable_scan needs at least one variable");
  if (w.a_log.numel() != p * dh) {
    throw ShapeError("variable_scan: configured for " + std::to_string(w.a_log.numel()) +
                     " channels, input has P*Dh = " + std::to_string(p * dh));
  }
  const TokenParams tok = project_tokens(w, x_half);
  const Shape seq_shape{b, n, p * dh};
  const Tensor a = neg(exp(reshape(w.a_log, {p * dh})));
  const Tensor states = ssm::scan_states(reshape(x_half, seq_shape), a, reshape(tok.b, seq_shape),
                                         reshape(tok.delta, seq_shape),
                                         dir == ScanDirection::backward);
  return {reshape(states, x_half.shape()), tok.c};
}

Tensor time_scan(const Tensor& x_half, const ScanBranchWeights& w, ScanDirection dir) {
  if (x_half.rank() != 4) throw ShapeError("time_scan expects [B, N, P, Dh]");
  const Index dh = x_half.dim(3);
  if (w.a_log.numel() != dh) throw ShapeError("time_scan: channel count mismatch");
  const TokenParams tok = project_tokens(w, x_half);
  const Shape seq_shape{x_half.dim(0) * x_half.dim(1), x_half.dim(2), dh};
  const Tensor a = neg(exp(w.a_log));
  const ssm::ScanOutput out =
      ssm::selective_scan(reshape(x_half, seq_shape), a, reshape(tok.b, seq_shape),
                          reshape(tok.c, seq_shape), reshape(tok.delta, seq_shape), w.d_skip,
                          dir == ScanDirection::backward);
  return reshape(out.y, x_half.shape());
}

Tensor compute_offsets(const Tensor& h, const TimeTuneWeights& w, Index n_samples) {
  if (h.rank() != 3) throw ShapeError("compute_offsets expects h as [R, P, Dh]");
  const Index r = h.dim(0);
  const Index p = h.dim(1);
  if (p < 1) throw ShapeError("compute_offsets needs P >= 1");
  if (w.offset_conv2_w.dim(0) != n_samples) throw ShapeError("offset conv width != M");
  Tensor pooled = reshape(mean_last(h), {r, 1, p});
  Tensor hidden = silu(conv1d(pooled, w.offset_conv1_w, w.offset_conv1_b, 1));
  Tensor offsets = conv1d(hidden, w.offset_conv2_w, w.offset_conv2_b, 1);
  return transpose_last2(offsets);
}

Tensor time_tune(const Tensor& h, const Tensor& offsets, const TimeTuneWeights& w,
                 bool residual_sampling) {
  const Index r = h.dim(0);
  const Index p = h.dim(1);
  const Index dh = h.dim(2);
  const Index m = offsets.dim(2);
  if (w.fuse_w.dim(0) != m) throw ShapeError("time_tune: fusion width != M");
  const std::vector<double> base = base_offsets(m);
  Tensor sampled = deformable_sample(h, offsets, base, residual_sampling);
  Tensor fused = add_bcast(matmul(reshape(sampled, {r * p * dh, m}), w.fuse_w), w.fuse_b);
  return reshape(fused, {r, p, dh});
}

Tensor hyper_scan(const Tensor& x_half, const HyperScanWeights& w, ScanDirection dir,
                  const HyperMambaOptions& opt) {
  if (opt.variant == ScanVariant::time_only) return time_scan(x_half, w.time_scan, dir);

  const VariableScan vs = variable_scan(x_half, w.var_scan, dir);
  const Index b = x_half.dim(0);
  const Index n = x_half.dim(1);
  const Index p = x_half.dim(2);
  const Index dh = x_half.dim(3);
  const Tensor h = reshape(vs.states, {b * n, p, dh});
  Tensor tuned = h;
  if (opt.variant == ScanVariant::hyper) {
    const Tensor offsets = opt.adaptive_time_tune
                               ? compute_offsets(h, w.tune, opt.n_samples)
                               : Tensor::zeros({b * n, p, opt.n_samples});
    tuned = time_tune(h, offsets, w.tune, opt.residual_sampling);
  } else if (opt.variant == ScanVariant::non_adaptive) {
    tuned = mix_over_patches(h, w.time_mix);
  }
  Tensor y = mul(vs.c, reshape(tuned, x_half.shape()));
  if (w.var_scan.d_skip.defined()) y = add(y, mul_bcast(x_half, w.var_scan.d_skip));
  if (opt.variant == ScanVariant::time_then_var) y = time_scan(y, w.time_scan, dir);
  return y;
}

Tensor hypermamba_forward(const Tensor& e, const HyperMambaWeights& w,
                          const HyperMambaOptions& opt) {
  if (e.rank() != 4) throw ShapeError("hypermamba_forward expects [B, N, P, D]");
  const Index d = e.dim(3);
  if (d % 2 != 0) throw ShapeError("hypermamba_forward: odd channel count " + std::to_string(d));
  const Index half = d / 2;
  const Tensor et = w.in_proj_t(e);
  const Tensor ez = w.in_proj_z(e);
  const Tensor first = hyper_scan(slice_last(et, 0, half), w.forward, ScanDirection::forward, opt);
  const Tensor second =
      hyper_scan(slice_last(et, half, half), w.backward, ScanDirection::backward, opt);
  return mul(concat_last(first, second), silu(ez));
}

}  // namespace timepro
