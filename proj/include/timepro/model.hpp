// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "timepro/hyperscan.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace timepro {

struct ModelConfig {
  Index lookback = 96;    // L
  Index horizon = 96;     // H
  Index n_vars = 7;       // N, informational: no parameter depends on it
  Index patch_len = 16;   // P_l
  Index stride = 8;       // S_l
  Index embed_dim = 48;   // D
  Index n_layers = 2;     // gamma
  Index n_samples = 9;    // M
  Index ffn_ratio = 2;
  bool adaptive_time_tune = true;
  bool skip_term = true;
  bool residual_sampling = false;
  ScanVariant scan_variant = ScanVariant::hyper;

  /// floor((L - P_l) / S_l) + 2
  Index n_patches() const;
  void validate() const;
  HyperMambaOptions hypermamba_options() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

Index patch_count(Index lookback, Index patch_len, Index stride);

/// Start offsets of each patch within the end-padded series.
std::vector<Index> patch_starts(Index lookback, Index patch_len, Index stride);

/// Appends the last value `stride` times to every row of series [R, L] and
/// cuts P windows of length P_l. Returns [R, P, P_l].
Array extract_patches(const Array& series, Index rows, Index lookback, Index patch_len,
                      Index stride);

struct RevInStats {
  Array mean;  // one per (instance, variable) row
  Array std;   // sqrt(population variance + eps), so std >= sqrt(eps)
  double eps = 1e-5;
};

struct RevInResult {
  Tensor normalized;
  RevInStats stats;
};

/// Zero mean, unit variance per row of the last axis. Inputs are treated as data.
RevInResult revin_normalize(const Tensor& x, double eps = 1e-5);
/// y * std + mean per row; differentiable in y.
Tensor revin_denormalize(const Tensor& y, const RevInStats& stats);

struct TimeFfnWeights {
  Linear up;    // P -> r*P
  Linear down;  // r*P -> P
};

/// Per-(variable, feature) MLP along the patch axis: P -> rP -> P with SiLU.
Tensor time_ffn(const Tensor& e, const TimeFfnWeights& w);

struct ProBlockWeights {
  Tensor norm1_gain, norm1_offset;
  std::optional<HyperMambaWeights> hyper;
  Tensor norm2_gain, norm2_offset;
  TimeFfnWeights ffn;
};

/// Captured residual-stream features around each HyperMamba sub-layer.
struct ForwardTrace {
  std::vector<Tensor> hyper_inputs;   // norm1(E), [B, N, P, D]
  std::vector<Tensor> hyper_outputs;  // E_hat, [B, N, P, D]
};

Tensor problock_forward(const Tensor& e, const ProBlockWeights& w, const HyperMambaOptions& opt,
                        ForwardTrace* trace = nullptr);

/// Checkpoint parse/validation failure; `what()` names the first offending entry.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

class TimeProModel {
 public:
  explicit TimeProModel(ModelConfig cfg, std::uint64_t seed = 0);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// X [B, N, L] -> Y_hat [B, N, H]; X [N, L] -> [N, H].
  Tensor forward(const Tensor& x, ForwardTrace* trace = nullptr) const;

  /// Patch embedding of normalized input [B, N, L] -> [B, N, P, D].
  Tensor patch_embed(const Tensor& x_norm) const;

  const std::vector<ProBlockWeights>& blocks() const { return blocks_; }

  void save(const std::filesystem::path& path) const;
  nlohmann::json to_json() const;
  /// Shapes in the file are validated against `cfg` entry by entry.
  static TimeProModel load(const std::filesystem::path& path,
                           const std::optional<ModelConfig>& cfg = std::nullopt);
  static TimeProModel from_json(const nlohmann::json& j,
                                const std::optional<ModelConfig>& cfg = std::nullopt);

  static constexpr int kCheckpointVersion = 1;

 private:
  ModelConfig cfg_;
  ParamStore params_;
  Linear embed_;
  Tensor position_;
  std::vector<ProBlockWeights> blocks_;
  Linear head_;
};

}  // namespace timepro
