// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "timepro/data.hpp"
#include "timepro/model.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace timepro {

struct TrainConfig {
  double lr0 = 5e-4;
  Index batch_size = 32;
  Index max_epochs = 30;
  Index patience = 5;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;  // <= 0 disables clipping
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index max_batches_per_epoch = 0;  // 0 uses every training window each epoch
  Index eval_batch_size = 128;

  void validate() const;
};

/// lr0 * 0.5 * (1 + cos(pi * step / total_steps)); step is clamped to [0, total_steps].
double cosine_lr(double lr0, Index step, Index total_steps);

class Adam {
 public:
  Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  /// One bias-corrected update from the gradients currently held by the parameters.
  void step(double lr);
  Index steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Array> m_, v_;
  double beta1_, beta2_, eps_;
  Index t_ = 0;
};

/// Global L2 norm over all gradients.
double grad_norm(std::span<const Tensor> params);
/// Rescales gradients so their global norm is at most `max_norm`; returns the norm before clipping.
double clip_grad_norm(std::span<const Tensor> params, double max_norm);

/// Non-finite loss or gradient during optimization.
class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& what, Index step, double lr, double grad_norm);
  Index step;
  double lr;
  double grad_norm;
};

struct EpochRecord {
  Index epoch = 0;  // 0 is the untrained model
  double train_mse = 0.0;
  double val_mse = 0.0;
  double lr = 0.0;  // learning rate at the end of the epoch
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  Index best_epoch = 0;
  double best_val_mse = 0.0;
  Index steps = 0;
  bool early_stopped = false;
};

/// Adam on MSE with a per-step cosine schedule. The model ends up holding the
/// best-validation weights.
TrainResult train(TimeProModel& model, const SeriesDataset& ds, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

void write_epoch_log_header(std::ostream& out);
void write_epoch_record(std::ostream& out, const EpochRecord& r);

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
};

Metrics compute_metrics(const Tensor& prediction, const Tensor& target);
double mse(const Tensor& prediction, const Tensor& target);
double mae(const Tensor& prediction, const Tensor& target);

/// Any map from inputs [B, N, L] to forecasts [B, N, H].
using Forecaster = std::function<Tensor(const Tensor&)>;

/// Metrics accumulated over every window of the segment.
Metrics evaluate_forecaster(const Forecaster& f, const SeriesDataset& ds, Segment segment,
                            Index lookback, Index horizon, Index batch_size = 128);
Metrics evaluate(const TimeProModel& model, const SeriesDataset& ds, Segment segment,
                 Index batch_size = 128);

/// Repeats the last lookback value H times per channel.
Tensor persistence_forecast(const Tensor& x, Index horizon);

/// One L -> H affine map shared by all channels.
struct ChannelLinear {
  RowMatrix weight;  // L x H
  Eigen::RowVectorXd bias;

  Tensor operator()(const Tensor& x) const;
  Index lookback() const { return weight.rows(); }
  Index horizon() const { return weight.cols(); }
};

/// Least squares over all train windows and channels via the normal equations.
ChannelLinear fit_channel_linear(const SeriesDataset& ds, Index lookback, Index horizon);

/// Pearson correlation between the rows of series [N, T].
RowMatrix pearson_matrix(const RowMatrix& series, double eps = 1e-12);

struct CorrelationReport {
  RowMatrix gt_corr;
  RowMatrix pre_hyper_corr;
  RowMatrix post_hyper_corr;
  double pre_distance = 0.0;   // ||pre - gt||_F
  double post_distance = 0.0;  // ||post - gt||_F
};

/// Correlations of the target slice and of the first HyperMamba's input and
/// output features (flattened over P*D per variable) for the window at `origin`.
CorrelationReport correlation_report(const TimeProModel& model, const SeriesDataset& ds,
                                     Index origin);

struct CorrelationSummary {
  std::vector<CorrelationReport> reports;
  std::vector<Index> origins;
  double median_pre_distance = 0.0;
  double median_post_distance = 0.0;
};

/// Reports on `count` evenly spaced windows of the segment.
CorrelationSummary correlation_summary(const TimeProModel& model, const SeriesDataset& ds,
                                       Segment segment, Index count);

double median(std::vector<double> values);

/// Applies an ablation name to a config: any scan variant name, "adaptive",
/// or "adaptive_off" (zero offsets with learned fusion).
ModelConfig apply_variant(ModelConfig cfg, const std::string& variant);

struct AblationResult {
  std::string variant;
  Metrics test;
  TrainResult training;
};

/// Trains the variant from `seed` and evaluates it on the test segment.
AblationResult run_ablation(const std::string& variant, const SeriesDataset& ds,
                            const ModelConfig& base, const TrainConfig& tc,
                            std::uint64_t seed);

struct BenchOptions {
  Index batch = 4;
  Index embed_dim = 48;
  Index patch_len = 16;
  Index stride = 8;
  Index n_samples = 9;
  Index repeats = 7;
  std::uint64_t seed = 0;
};

struct BenchRow {
  Index n_vars = 0;
  Index lookback = 0;
  Index patches = 0;
  double seconds = 0.0;  // median over repeats
};

/// Wall time of one HyperMamba forward pass per (N, L) grid point, N fastest.
std::vector<BenchRow> bench_scaling(std::span<const Index> n_list, std::span<const Index> l_list,
                                    const BenchOptions& opt = {});

struct ScalingRatio {
  Index from = 0;
  Index to = 0;
  Index fixed = 0;  // the other axis
  double ratio = 0.0;
};

/// Time ratios between consecutive entries along N (at each L) and along L (at each N).
std::vector<ScalingRatio> n_ratios(const std::vector<BenchRow>& rows);
std::vector<ScalingRatio> l_ratios(const std::vector<BenchRow>& rows);

}  // namespace timepro
