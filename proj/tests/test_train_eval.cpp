// SPDX-License-Identifier: Apache-2.0
#include "timepro/train_eval.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <sstream>

namespace timepro {
namespace {

ModelConfig small_model(Index n_vars) {
  ModelConfig c;
  c.lookback = 32;
  c.horizon = 8;
  c.n_vars = n_vars;
  c.patch_len = 8;
  c.stride = 4;
  c.embed_dim = 8;
  c.n_layers = 1;
  c.n_samples = 3;
  return c;
}

SeriesDataset small_synthetic(SyntheticKind kind, Index n_vars, std::uint64_t seed, Index length = 600) {
  SyntheticSpec spec;
  spec.kind = kind;
  spec.n_vars = n_vars;
  spec.length = length;
  spec.seed = seed;
  return standardize(make_synthetic(spec));
}

TrainConfig quick_training(Index epochs, Index batches) {
  TrainConfig tc;
  tc.lr0 = 3e-3;
  tc.max_epochs = epochs;
  tc.max_batches_per_epoch = batches;
  tc.batch_size = 16;
  tc.patience = epochs;
  return tc;
}

RowMatrix two_pass_pearson(const RowMatrix& s) {
  const Index n = s.rows(), t = s.cols();
  RowMatrix out(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double mi = s.row(i).mean(), mj = s.row(j).mean();
      double sij = 0, sii = 0, sjj = 0;
      for (Index k = 0; k < t; ++k) {
        sij += (s(i, k) - mi) * (s(j, k) - mj);
        sii += (s(i, k) - mi) * (s(i, k) - mi);
        sjj += (s(j, k) - mj) * (s(j, k) - mj);
      }
      out(i, j) = sij / std::sqrt(sii * sjj);
    }
  }
  return out;
}

TEST(Metrics, HandValues) {
  Array p(4), t(4);
  p << 1, 2, 3, 4;
  t << 1, 0, 3, 7;
  const Metrics m = compute_metrics(Tensor::from({2, 2}, p), Tensor::from({2, 2}, t));
  EXPECT_DOUBLE_EQ(m.mse, (4.0 + 9.0) / 4.0);
  EXPECT_DOUBLE_EQ(m.mae, (2.0 + 3.0) / 4.0);
  EXPECT_EQ(mse(Tensor::from({4}, t), Tensor::from({4}, t)), 0.0);
  EXPECT_THROW(mse(Tensor::zeros({3}), Tensor::zeros({4})), ShapeError);
}

TEST(Baselines, PersistenceIsExactOnConstantSeries) {
  SeriesDataset ds;
  ds.name = "flat";
  ds.values = RowMatrix::Constant(100, 2, 3.5);
  ds.split = compute_split(100, SplitRule::ratio_70_10_20);
  const Metrics m = evaluate_forecaster([](const Tensor& x) { return persistence_forecast(x, 4); }, ds,
                                        Segment::test, 8, 4);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.mae, 0.0);
  Array x(6);
  x << 1, 2, 3, 4, 5, 6;
  const Tensor f = persistence_forecast(Tensor::from({1, 2, 3}, x), 2);
  EXPECT_EQ(f.shape(), (Shape{1, 2, 2}));
  EXPECT_TRUE((f.data() == (Array(4) << 3, 3, 6, 6).finished()).all());
}

TEST(Baselines, ChannelLinearFitsARampExactly) {
  // Colinear lookback features: the fit goes through the rank-revealing fallback.
  SeriesDataset ds;
  ds.name = "ramp";
  ds.values.resize(120, 2);
  for (Index t = 0; t < 120; ++t) {
    ds.values(t, 0) = 0.1 * t;
    ds.values(t, 1) = 5.0 - 0.3 * t;
  }
  ds.split = compute_split(120, SplitRule::ratio_70_10_20);
  const ChannelLinear lin = fit_channel_linear(ds, 6, 3);
  EXPECT_EQ(lin.lookback(), 6);
  EXPECT_EQ(lin.horizon(), 3);
  const Metrics m = evaluate_forecaster(lin, ds, Segment::test, 6, 3);
  EXPECT_LT(m.mse, 1e-18);
}

TEST(Baselines, NormalEquationsAgreeWithGradientDescent) {
  const SeriesDataset ds = small_synthetic(SyntheticKind::ar1, 3, 5, 400);
  const Index l = 3, h = 2;
  const ChannelLinear lin = fit_channel_linear(ds, l, h);
  // Design matrix [window, lookback | 1] over every train window and channel.
  const std::vector<Index> origins = window_origins(ds, Segment::train, l, h);
  const Index rows = static_cast<Index>(origins.size()) * ds.n_vars();
  Eigen::MatrixXd a(rows, l + 1), y(rows, h);
  Index r = 0;
  for (Index o : origins) {
    for (Index c = 0; c < ds.n_vars(); ++c, ++r) {
      for (Index k = 0; k < l; ++k) a(r, k) = ds.values(o - l + k, c);
      a(r, l) = 1.0;
      for (Index k = 0; k < h; ++k) y(r, k) = ds.values(o + k, c);
    }
  }
  const Eigen::MatrixXd gram = a.transpose() * a / static_cast<double>(rows);
  const double step = 1.0 / Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram).eigenvalues().maxCoeff();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(l + 1, h);
  for (int it = 0; it < 200000; ++it) w -= step * (gram * w - a.transpose() * y / static_cast<double>(rows));
  EXPECT_LT((w.topRows(l) - lin.weight).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_LT((w.row(l) - lin.bias).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Pearson, PerfectCorrelationsAndOracle) {
  RowMatrix s(3, 50);
  Rng rng(6);
  for (Index t = 0; t < 50; ++t) {
    s(0, t) = rng.normal();
    s(1, t) = -2.0 * s(0, t) + 1.0;
    s(2, t) = rng.normal();
  }
  RowMatrix pair(2, 50);
  pair.row(0) = s.row(0);
  pair.row(1) = 3.0 * s.row(0).array() + 2.0;
  EXPECT_NEAR(pearson_matrix(pair)(0, 1), 1.0, 1e-12);
  const RowMatrix c = pearson_matrix(s);
  EXPECT_NEAR(c(0, 1), -1.0, 1e-12);
  s.row(2) = rng.normal_array(50, 1.0).transpose();
  const RowMatrix c2 = pearson_matrix(s);
  EXPECT_LT((c2 - two_pass_pearson(s)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Pearson, StructuralInvariants) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.next() % 9);
    const Index t = 2 + static_cast<Index>(rng.next() % 60);
    RowMatrix s(n, t);
    for (Index i = 0; i < s.size(); ++i) s.data()[i] = rng.normal() * 1e3;
    if (n > 2) s.row(1) = s.row(0) * 1e-6;  // near-duplicate rows stay in range
    const RowMatrix c = pearson_matrix(s);
    EXPECT_LT((c - c.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((c.diagonal().array() - 1.0).abs().maxCoeff(), 1e-12);
    EXPECT_LE(c.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
  }
  const RowMatrix flat = pearson_matrix(RowMatrix::Constant(2, 5, 1.0));
  EXPECT_TRUE(flat.allFinite());
}

TEST(Schedule, CosineEndpointsAndMonotonicity) {
  EXPECT_EQ(cosine_lr(5e-4, 0, 100), 5e-4);
  EXPECT_NEAR(cosine_lr(5e-4, 100, 100), 0.0, 1e-20);
  EXPECT_NEAR(cosine_lr(5e-4, 50, 100), 2.5e-4, 1e-18);
  EXPECT_NEAR(cosine_lr(1.0, 25, 100), 0.5 * (1 + std::cos(std::numbers::pi / 4)), 1e-15);
  double prev = cosine_lr(1.0, 0, 977);
  for (Index s = 1; s <= 977; ++s) {
    const double lr = cosine_lr(1.0, s, 977);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Optim, AdamFirstStepIsSignedLearningRate) {
  Tensor p = Tensor::from({3}, (Array(3) << 1.0, -2.0, 0.5).finished(), true);
  Adam adam({p});
  sum(mul(p, Tensor::from({3}, (Array(3) << 4.0, -0.5, 0.0).finished()))).backward();
  adam.step(0.1);
  EXPECT_NEAR(p.data()(0), 0.9, 1e-8);
  EXPECT_NEAR(p.data()(1), -1.9, 1e-8);
  EXPECT_EQ(p.data()(2), 0.5);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Optim, ClipGlobalNorm) {
  Tensor a = Tensor::from({1}, (Array(1) << 1.0).finished(), true);
  Tensor b = Tensor::from({1}, (Array(1) << 1.0).finished(), true);
  add(scale(a, 3.0), scale(b, 4.0)).backward();
  const std::vector<Tensor> params{a, b};
  EXPECT_DOUBLE_EQ(grad_norm(params), 5.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(a.grad()(0), 0.6, 1e-15);
  EXPECT_NEAR(b.grad()(0), 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm(params, 10.0), 1.0, 1e-15);
  EXPECT_NEAR(a.grad()(0), 0.6, 1e-15);
}

TEST(Training, LearnsAnAutoregressiveSeries) {
  const SeriesDataset ds = small_synthetic(SyntheticKind::ar1, 3, 8);
  TimeProModel model(small_model(3), 1);
  const TrainResult r = train(model, ds, quick_training(6, 20));
  ASSERT_EQ(r.log.size(), 7u);
  EXPECT_LE(r.best_val_mse, 0.5 * r.log.front().val_mse);
  // The model holds the best-validation weights.
  EXPECT_EQ(evaluate(model, ds, Segment::val).mse, r.best_val_mse);
  EXPECT_EQ(r.log[static_cast<std::size_t>(r.best_epoch)].val_mse, r.best_val_mse);
}

TEST(Training, SeededRunsAreBitwiseIdentical) {
  const SeriesDataset ds = small_synthetic(SyntheticKind::multi_delay, 3, 9);
  auto run = [&] {
    TimeProModel model(small_model(3), 4);
    TrainConfig tc = quick_training(2, 5);
    tc.seed = 11;
    const TrainResult r = train(model, ds, tc);
    return std::make_pair(r, model.params().snapshot());
  };
  const auto [r1, w1] = run();
  const auto [r2, w2] = run();
  ASSERT_EQ(r1.log.size(), r2.log.size());
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    EXPECT_EQ(r1.log[i].train_mse, r2.log[i].train_mse);
    EXPECT_EQ(r1.log[i].val_mse, r2.log[i].val_mse);
    EXPECT_EQ(r1.log[i].lr, r2.log[i].lr);
  }
  for (std::size_t i = 0; i < w1.size(); ++i) EXPECT_TRUE((w1[i] == w2[i]).all());
}

TEST(Training, EarlyStoppingAndLog) {
  const SeriesDataset ds = small_synthetic(SyntheticKind::ar1, 2, 10);
  TimeProModel model(small_model(2), 2);
  TrainConfig tc = quick_training(30, 2);
  tc.lr0 = 1e-30;  // updates fall below the rounding of the validation loss
  tc.patience = 1;
  std::vector<Index> seen;
  const TrainResult r = train(model, ds, tc, [&](const EpochRecord& e) { seen.push_back(e.epoch); });
  EXPECT_TRUE(r.early_stopped);
  EXPECT_LT(r.log.size(), 31u);
  EXPECT_EQ(seen.size(), r.log.size());
  std::ostringstream out;
  write_epoch_log_header(out);
  write_epoch_record(out, r.log.front());
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "epoch,train_mse,val_mse,lr,seconds");
}

TEST(Training, RejectsMismatchedDataAndBadConfig) {
  const SeriesDataset ds = small_synthetic(SyntheticKind::ar1, 2, 12);
  TimeProModel model(small_model(3), 1);
  EXPECT_THROW(train(model, ds, quick_training(1, 1)), Error);
  TrainConfig bad;
  bad.lr0 = 0.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Training, NonFiniteLossIsATrainingError) {
  SeriesDataset ds = small_synthetic(SyntheticKind::ar1, 2, 13);
  ds.values(100, 1) = 1e200;
  TimeProModel model(small_model(2), 1);
  TrainConfig tc = quick_training(1, 100);
  tc.batch_size = 200;
  EXPECT_THROW(train(model, ds, tc), NumericError);
}

TEST(Ablation, EveryVariantRunsEndToEnd) {
  const SeriesDataset ds = small_synthetic(SyntheticKind::multi_delay, 3, 14, 300);
  for (const std::string v : {"hyper", "var_only", "time_only", "time_then_var", "non_adaptive", "none",
                              "baseline", "adaptive", "adaptive_off"}) {
    const AblationResult r = run_ablation(v, ds, small_model(3), quick_training(1, 2), 3);
    EXPECT_EQ(r.variant, v);
    EXPECT_TRUE(std::isfinite(r.test.mse)) << v;
  }
  EXPECT_FALSE(apply_variant(small_model(3), "adaptive_off").adaptive_time_tune);
  EXPECT_EQ(apply_variant(small_model(3), "time_only").scan_variant, ScanVariant::time_only);
  EXPECT_THROW(apply_variant(small_model(3), "sideways"), Error);
}

TEST(Correlation, ReportShapesAndGroundTruth) {
  const SeriesDataset ds = small_synthetic(SyntheticKind::multi_delay, 4, 15, 400);
  TimeProModel model(small_model(4), 5);
  const Index origin = window_origins(ds, Segment::test, 32, 8).front();
  const CorrelationReport r = correlation_report(model, ds, origin);
  EXPECT_EQ(r.gt_corr.rows(), 4);
  EXPECT_EQ(r.pre_hyper_corr.cols(), 4);
  const WindowSample w = make_window(ds, origin, 32, 8);
  EXPECT_LT((r.gt_corr - pearson_matrix(w.y)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(r.post_distance, (r.post_hyper_corr - r.gt_corr).norm(), 1e-12);
  const CorrelationSummary s = correlation_summary(model, ds, Segment::test, 5);
  EXPECT_EQ(s.reports.size(), 5u);
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_THROW(correlation_report(TimeProModel([] {
                                    ModelConfig c = small_model(4);
                                    c.scan_variant = ScanVariant::none;
                                    return c;
                                  }()),
                                  ds, origin),
               Error);
}

TEST(Bench, GridOrderAndRatios) {
  BenchOptions opt;
  opt.repeats = 1;
  opt.embed_dim = 8;
  const std::vector<Index> n{2, 4}, l{32, 64};
  const std::vector<BenchRow> rows = bench_scaling(n, l, opt);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1].n_vars, 4);
  EXPECT_EQ(rows[1].lookback, 32);
  EXPECT_EQ(rows[2].lookback, 64);
  EXPECT_EQ(rows[2].patches, patch_count(64, 16, 8));
  EXPECT_EQ(n_ratios(rows).size(), 2u);
  EXPECT_EQ(l_ratios(rows).size(), 2u);
  for (const BenchRow& r : rows) EXPECT_GT(r.seconds, 0.0);
}

}  // namespace
}  // namespace timepro
