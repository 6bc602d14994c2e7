// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "timepro/params.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace timepro {

enum class ScanVariant {
  hyper,          // bidirectional variable scan + adaptive time-tune
  var_only,       // variable scan, plain state straight to C
  time_only,      // scan along the patch axis within each variable
  time_then_var,  // variable scan followed by a patch-axis scan
  non_adaptive,   // time-tune replaced by a learned P x P mixing
  none,           // no HyperMamba sub-layer at all
};

std::string_view to_string(ScanVariant v);
ScanVariant parse_scan_variant(std::string_view name);

enum class ScanDirection { forward, backward };

struct HyperMambaOptions {
  Index patches = 12;
  Index embed_dim = 48;
  Index n_samples = 9;
  ScanVariant variant = ScanVariant::hyper;
  bool adaptive_time_tune = true;
  bool skip_term = true;
  bool residual_sampling = false;  // h_hat = h + psi(h; coords) instead of psi alone

  Index half_dim() const { return embed_dim / 2; }
  void validate() const;
};

/// Producers of the per-token selective parameters for one scan axis.
/// a_log and d_skip carry one entry per scanned channel.
struct ScanBranchWeights {
  Linear delta_proj;  // Dh -> Dh, softplus applied afterwards
  Linear b_proj;      // Dh -> 1, one input gain per (variable, patch) token
  Linear c_proj;      // Dh -> 1
  Tensor a_log;       // A = -exp(a_log)
  Tensor d_skip;      // undefined when the skip term is off
};

struct TimeTuneWeights {
  Tensor offset_conv1_w;  // [2M, 1, 3]
  Tensor offset_conv1_b;  // [2M]
  Tensor offset_conv2_w;  // [M, 2M, 3], zero at init
  Tensor offset_conv2_b;  // [M], zero at init
  Tensor fuse_w;          // [M, 1], one-hot on the zero-displacement sample at init
  Tensor fuse_b;          // [1]
};

struct HyperScanWeights {
  ScanBranchWeights var_scan;   // hyper, var_only, non_adaptive, time_then_var
  TimeTuneWeights tune;         // hyper
  Tensor time_mix;              // non_adaptive: [P, P], identity at init (right-multiplied)
  ScanBranchWeights time_scan;  // time_only, time_then_var
};

struct HyperMambaWeights {
  Linear in_proj_t;  // D -> D per patch, no bias
  Linear in_proj_z;
  HyperScanWeights forward;
  HyperScanWeights backward;
};

/// Registers all weights for the configured variant under `prefix`.
HyperMambaWeights make_hypermamba_weights(ParamStore& store, const std::string& prefix,
                                          const HyperMambaOptions& opt, Rng& rng);

/// Reference displacements around each patch index, centred on 0: -4..4 for M = 9.
std::vector<double> base_offsets(Index n_samples);

struct TokenParams {
  Tensor delta;  // [B, N, P, Dh]
  Tensor b;
  Tensor c;
};
TokenParams project_tokens(const ScanBranchWeights& w, const Tensor& x);

struct VariableScan {
  Tensor states;  // [B, N, P, Dh]
  Tensor c;       // output projection for the later y = C * h_o
};

/// Selective scan with the variable index as the sequence axis and the
/// P*Dh features as channels. C is returned unapplied.
VariableScan variable_scan(const Tensor& x_half, const ScanBranchWeights& w, ScanDirection dir);

/// Plain selective scan along the patch axis of each variable, C applied.
Tensor time_scan(const Tensor& x_half, const ScanBranchWeights& w, ScanDirection dir);

/// Offsets in patch units from states h [R, P, Dh]: mean over Dh, then a
/// two-layer same-padded conv along P. Returns [R, P, M].
Tensor compute_offsets(const Tensor& h, const TimeTuneWeights& w, Index n_samples);

/// Interpolated temporal resampling of h [R, P, Dh] at clamp(p + base + offsets),
/// fused over the M samples. Returns h_o [R, P, Dh].
Tensor time_tune(const Tensor& h, const Tensor& offsets, const TimeTuneWeights& w,
                 bool residual_sampling = false);

/// Per-half pipeline of one scan direction; x_half is [B, N, P, Dh].
Tensor hyper_scan(const Tensor& x_half, const HyperScanWeights& w, ScanDirection dir,
                  const HyperMambaOptions& opt);

/// E [B, N, P, D] -> E_hat [B, N, P, D]:
/// E_t, E_z projections, halves scanned in opposite variable directions, SiLU(E_z) gate.
Tensor hypermamba_forward(const Tensor& e, const HyperMambaWeights& w,
                          const HyperMambaOptions& opt);

}  // namespace timepro
