// SPDX-License-Identifier: Apache-2.0
#include "timepro/train_eval.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

namespace timepro {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw Error("lr0 must be positive");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (max_epochs < 0) throw Error("max_epochs must be >= 0");
  if (patience < 1) throw Error("patience must be >= 1");
  if (eval_batch_size < 1) throw Error("eval_batch_size must be >= 1");
  if (max_batches_per_epoch < 0) throw Error("max_batches_per_epoch must be >= 0");
}

double cosine_lr(double lr0, Index step, Index total_steps) {
  if (total_steps <= 0) return lr0;
  const double t = static_cast<double>(std::clamp<Index>(step, 0, total_steps));
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(total_steps)));
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Tensor& p : params_) {
    m_.push_back(Array::Zero(p.numel()));
    v_.push_back(Array::Zero(p.numel()));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    const Array& g = p.node()->grad;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.square();
    p.mutable_data() -= lr * (m_[i] / c1) / ((v_[i] / c2).sqrt() + eps_);
  }
}

double grad_norm(std::span<const Tensor> params) {
  double sq = 0.0;
  for (const Tensor& p : params) {
    if (p.has_grad()) sq += p.node()->grad.square().sum();
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<const Tensor> params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
    const double s = max_norm / norm;
    for (const Tensor& p : params) {
      if (p.has_grad()) p.node()->grad *= s;
    }
  }
  return norm;
}

TrainingError::TrainingError(const std::string& what, Index step_, double lr_, double grad_norm_)
    : NumericError(what + " (step=" + std::to_string(step_) + " lr=" + std::to_string(lr_) +
                   " grad_norm=" + std::to_string(grad_norm_) + ")"),
      step(step_),
      lr(lr_),
      grad_norm(grad_norm_) {}

void write_epoch_log_header(std::ostream& out) { out << "epoch,train_mse,val_mse,lr,seconds\n"; }

void write_epoch_record(std::ostream& out, const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.3f\n", static_cast<long long>(r.epoch),
                r.train_mse, r.val_mse, r.lr, r.seconds);
  out << buf;
  out.flush();
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("metrics: shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

struct ErrorSums {
  double sq = 0.0;
  double abs = 0.0;
  Index count = 0;

  void add(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target);
    const Array diff = pred.data() - target.data();
    sq += diff.square().sum();
    abs += diff.abs().sum();
    count += diff.size();
  }
  Metrics metrics() const {
    if (count == 0) return {};
    return {sq / static_cast<double>(count), abs / static_cast<double>(count)};
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Metrics compute_metrics(const Tensor& prediction, const Tensor& target) {
  ErrorSums s;
  s.add(prediction, target);
  return s.metrics();
}

double mse(const Tensor& prediction, const Tensor& target) {
  return compute_metrics(prediction, target).mse;
}

double mae(const Tensor& prediction, const Tensor& target) {
  return compute_metrics(prediction, target).mae;
}

Metrics evaluate_forecaster(const Forecaster& f, const SeriesDataset& ds, Segment segment,
                            Index lookback, Index horizon, Index batch_size) {
  const std::vector<Index> origins = window_origins(ds, segment, lookback, horizon);
  if (origins.empty()) {
    throw DataError("horizon " + std::to_string(horizon) + " exceeds the " +
                    std::string(to_string(segment)) + " segment of " + ds.name);
  }
  NoGradGuard no_grad;
  ErrorSums sums;
  const std::span<const Index> all(origins);
  for (std::size_t b = 0; b < origins.size(); b += static_cast<std::size_t>(batch_size)) {
    const auto chunk = all.subspan(b, std::min<std::size_t>(static_cast<std::size_t>(batch_size),
                                                            origins.size() - b));
    sums.add(f(gather_inputs(ds, chunk, lookback)), gather_targets(ds, chunk, horizon));
  }
  return sums.metrics();
}

Metrics evaluate(const TimeProModel& model, const SeriesDataset& ds, Segment segment,
                 Index batch_size) {
  const ModelConfig& cfg = model.config();
  return evaluate_forecaster([&](const Tensor& x) { return model.forward(x); }, ds, segment,
                             cfg.lookback, cfg.horizon, batch_size);
}

TrainResult train(TimeProModel& model, const SeriesDataset& ds, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  const ModelConfig& mc = model.config();
  if (mc.n_vars != ds.n_vars()) {
    throw Error("model expects " + std::to_string(mc.n_vars) + " variables, dataset " + ds.name +
                " has " + std::to_string(ds.n_vars()));
  }
  std::vector<Index> origins = window_origins(ds, Segment::train, mc.lookback, mc.horizon);
  if (origins.empty()) throw DataError("no training windows in " + ds.name);
  // Fail early if validation has no windows.
  if (window_origins(ds, Segment::val, mc.lookback, mc.horizon).empty()) {
    throw DataError("no validation windows in " + ds.name);
  }

  const Index n_windows = static_cast<Index>(origins.size());
  Index batches = (n_windows + cfg.batch_size - 1) / cfg.batch_size;
  if (cfg.max_batches_per_epoch > 0) batches = std::min(batches, cfg.max_batches_per_epoch);
  const Index total_steps = batches * cfg.max_epochs;

  ParamStore& store = model.params();
  const std::vector<Tensor> params = store.tensors();
  Adam adam(params, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Rng order_rng(cfg.seed ^ 0x5DEECE66DULL);

  TrainResult result;
  auto val_mse = [&] { return evaluate(model, ds, Segment::val, cfg.eval_batch_size).mse; };

  {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord r;
    r.epoch = 0;
    r.train_mse = evaluate(model, ds, Segment::train, cfg.eval_batch_size).mse;
    r.val_mse = val_mse();
    r.lr = cosine_lr(cfg.lr0, 0, total_steps);
    r.seconds = seconds_since(t0);
    result.log.push_back(r);
    result.best_val_mse = r.val_mse;
    if (on_epoch) on_epoch(r);
  }
  std::vector<Array> best = store.snapshot();
  Index stale = 0;

  Index step = 0;
  for (Index epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    order_rng.shuffle(origins);
    double loss_sum = 0.0;
    Index loss_count = 0;
    for (Index b = 0; b < batches; ++b) {
      const Index begin = b * cfg.batch_size;
      const Index count = std::min(cfg.batch_size, n_windows - begin);
      const std::span<const Index> chunk(origins.data() + begin, static_cast<std::size_t>(count));
      const Tensor x = gather_inputs(ds, chunk, mc.lookback);
      const Tensor y = gather_targets(ds, chunk, mc.horizon);
      const double lr = cosine_lr(cfg.lr0, step, total_steps);

      store.zero_grad();
      double loss_value = 0.0;
      double norm = 0.0;
      try {
        const Tensor loss = mse_loss(model.forward(x), y);
        loss_value = loss.item();
        loss.backward();
      } catch (const TrainingError&) {
        throw;
      } catch (const NumericError& e) {
        throw TrainingError(std::string("non-finite value: ") + e.what(), step, lr,
                            grad_norm(params));
      }
      norm = clip_grad_norm(params, cfg.clip_norm);
      if (!std::isfinite(loss_value) || !std::isfinite(norm)) {
        throw TrainingError("non-finite loss or gradient", step, lr, norm);
      }
      adam.step(lr);
      ++step;
      loss_sum += loss_value * static_cast<double>(count);
      loss_count += count;
    }

    EpochRecord r;
    r.epoch = epoch;
    r.train_mse = loss_sum / static_cast<double>(loss_count);
    r.val_mse = val_mse();
    r.lr = cosine_lr(cfg.lr0, step, total_steps);
    r.seconds = seconds_since(t0);
    result.log.push_back(r);
    if (on_epoch) on_epoch(r);

    if (r.val_mse < result.best_val_mse) {
      result.best_val_mse = r.val_mse;
      result.best_epoch = epoch;
      best = store.snapshot();
      stale = 0;
    } else if (++stale >= cfg.patience) {
      result.early_stopped = epoch < cfg.max_epochs;
      break;
    }
  }
  store.restore(best);
  store.zero_grad();
  result.steps = step;
  return result;
}

Tensor persistence_forecast(const Tensor& x, Index horizon) {
  if (x.rank() < 1 || horizon < 1) throw ShapeError("persistence: bad input");
  const Index l = x.dim(-1);
  const Index rows = x.numel() / l;
  Shape shape = x.shape();
  shape.back() = horizon;
  Array out(rows * horizon);
  for (Index r = 0; r < rows; ++r) out.segment(r * horizon, horizon).setConstant(x.data()(r * l + l - 1));
  return Tensor::from(std::move(shape), std::move(out));
}

Tensor ChannelLinear::operator()(const Tensor& x) const {
  if (x.dim(-1) != lookback()) throw ShapeError("channel-linear: lookback mismatch");
  const Index rows = x.numel() / lookback();
  Eigen::Map<const RowMatrix> in(x.data().data(), rows, lookback());
  RowMatrix out = (in * weight).rowwise() + bias;
  Shape shape = x.shape();
  shape.back() = horizon();
  return Tensor::from(std::move(shape), Eigen::Map<const Array>(out.data(), out.size()));
}

ChannelLinear fit_channel_linear(const SeriesDataset& ds, Index lookback, Index horizon) {
  const std::vector<Index> origins = window_origins(ds, Segment::train, lookback, horizon);
  if (origins.empty()) throw DataError("channel-linear: no training windows");
  const Index k = lookback + 1;
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd xty = Eigen::MatrixXd::Zero(k, horizon);
  Eigen::MatrixXd xa(ds.n_vars(), k);
  for (Index o : origins) {
    xa.leftCols(lookback) = ds.values.middleRows(o - lookback, lookback).transpose();
    xa.col(lookback).setOnes();
    const Eigen::MatrixXd ya = ds.values.middleRows(o, horizon).transpose();
    xtx.selfadjointView<Eigen::Lower>().rankUpdate(xa.transpose());
    xty.noalias() += xa.transpose() * ya;
  }
  xtx = xtx.selfadjointView<Eigen::Lower>();
  Eigen::MatrixXd sol;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
  sol = ldlt.solve(xty);
  const bool ok = ldlt.info() == Eigen::Success && sol.allFinite() &&
                  (xtx * sol - xty).norm() <= 1e-8 * std::max(1.0, xty.norm());
  if (!ok) sol = xtx.completeOrthogonalDecomposition().solve(xty);
  ChannelLinear m;
  m.weight = sol.topRows(lookback);
  m.bias = sol.row(lookback);
  return m;
}

RowMatrix pearson_matrix(const RowMatrix& series, double eps) {
  const Index n = series.rows();
  const Index t = series.cols();
  if (t < 2) throw ShapeError("pearson_matrix needs at least two time points");
  RowMatrix centred = series.colwise() - series.rowwise().mean();
  const Eigen::VectorXd norms = centred.rowwise().norm().cwiseMax(eps);
  RowMatrix unit = norms.asDiagonal().inverse() * centred;
  RowMatrix r = unit * unit.transpose();
  for (Index i = 0; i < n; ++i) {
    r(i, i) = 1.0;
    for (Index j = 0; j < i; ++j) {
      const double v = std::clamp(0.5 * (r(i, j) + r(j, i)), -1.0, 1.0);
      r(i, j) = v;
      r(j, i) = v;
    }
  }
  return r;
}

namespace {

RowMatrix per_variable_rows(const Tensor& features) {
  // [1, N, P, D] -> N x (P*D)
  const Index n = features.dim(1);
  const Index width = features.numel() / n;
  return Eigen::Map<const RowMatrix>(features.data().data(), n, width);
}

}  // namespace

CorrelationReport correlation_report(const TimeProModel& model, const SeriesDataset& ds,
                                     Index origin) {
  const ModelConfig& cfg = model.config();
  const Index one[] = {origin};
  const Tensor x = gather_inputs(ds, one, cfg.lookback);
  const Tensor y = gather_targets(ds, one, cfg.horizon);
  ForwardTrace trace;
  {
    NoGradGuard no_grad;
    model.forward(x, &trace);
  }
  if (trace.hyper_inputs.empty()) throw Error("correlation report needs a HyperMamba layer");
  CorrelationReport rep;
  rep.gt_corr = pearson_matrix(Eigen::Map<const RowMatrix>(y.data().data(), ds.n_vars(), cfg.horizon));
  rep.pre_hyper_corr = pearson_matrix(per_variable_rows(trace.hyper_inputs.front()));
  rep.post_hyper_corr = pearson_matrix(per_variable_rows(trace.hyper_outputs.front()));
  rep.pre_distance = (rep.pre_hyper_corr - rep.gt_corr).norm();
  rep.post_distance = (rep.post_hyper_corr - rep.gt_corr).norm();
  return rep;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

CorrelationSummary correlation_summary(const TimeProModel& model, const SeriesDataset& ds,
                                       Segment segment, Index count) {
  const ModelConfig& cfg = model.config();
  const std::vector<Index> origins = window_origins(ds, segment, cfg.lookback, cfg.horizon);
  if (origins.empty() || count < 1) throw DataError("correlation: no windows");
  CorrelationSummary s;
  const Index n = static_cast<Index>(origins.size());
  const Index used = std::min(count, n);
  std::vector<double> pre, post;
  for (Index i = 0; i < used; ++i) {
    const Index idx = used == 1 ? 0 : i * (n - 1) / (used - 1);
    s.origins.push_back(origins[static_cast<std::size_t>(idx)]);
    s.reports.push_back(correlation_report(model, ds, s.origins.back()));
    pre.push_back(s.reports.back().pre_distance);
    post.push_back(s.reports.back().post_distance);
  }
  s.median_pre_distance = median(pre);
  s.median_post_distance = median(post);
  return s;
}

ModelConfig apply_variant(ModelConfig cfg, const std::string& variant) {
  if (variant == "adaptive") {
    cfg.scan_variant = ScanVariant::hyper;
    cfg.adaptive_time_tune = true;
  } else if (variant == "adaptive_off") {
    cfg.scan_variant = ScanVariant::hyper;
    cfg.adaptive_time_tune = false;
  } else {
    cfg.scan_variant = parse_scan_variant(variant);
  }
  return cfg;
}

AblationResult run_ablation(const std::string& variant, const SeriesDataset& ds,
                            const ModelConfig& base, const TrainConfig& tc, std::uint64_t seed) {
  TimeProModel model(apply_variant(base, variant), seed);
  TrainConfig run = tc;
  run.seed = seed;
  AblationResult res;
  res.variant = variant;
  res.training = train(model, ds, run);
  res.test = evaluate(model, ds, Segment::test, tc.eval_batch_size);
  return res;
}

std::vector<BenchRow> bench_scaling(std::span<const Index> n_list, std::span<const Index> l_list,
                                    const BenchOptions& opt) {
  std::vector<BenchRow> rows;
  Rng rng(opt.seed);
  for (Index l : l_list) {
    const Index p = patch_count(l, opt.patch_len, opt.stride);
    HyperMambaOptions hm;
    hm.patches = p;
    hm.embed_dim = opt.embed_dim;
    hm.n_samples = opt.n_samples;
    ParamStore store;
    const HyperMambaWeights w = make_hypermamba_weights(store, "bench", hm, rng);
    for (Index n : n_list) {
      const Tensor e =
          Tensor::from({opt.batch, n, p, opt.embed_dim}, rng.normal_array(opt.batch * n * p * opt.embed_dim, 1.0));
      NoGradGuard no_grad;
      hypermamba_forward(e, w, hm);  // warm-up
      std::vector<double> times;
      for (Index r = 0; r < opt.repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const Tensor out = hypermamba_forward(e, w, hm);
        times.push_back(seconds_since(t0));
      }
      rows.push_back({n, l, p, median(times)});
    }
  }
  return rows;
}

namespace {

std::vector<ScalingRatio> ratios_along(const std::vector<BenchRow>& rows, bool along_n) {
  std::vector<ScalingRatio> out;
  for (const BenchRow& a : rows) {
    const BenchRow* next = nullptr;
    for (const BenchRow& b : rows) {
      const bool same_fixed = along_n ? b.lookback == a.lookback : b.n_vars == a.n_vars;
      const Index av = along_n ? a.n_vars : a.lookback;
      const Index bv = along_n ? b.n_vars : b.lookback;
      if (!same_fixed || bv <= av) continue;
      if (!next || bv < (along_n ? next->n_vars : next->lookback)) next = &b;
    }
    if (!next) continue;
    out.push_back({along_n ? a.n_vars : a.lookback, along_n ? next->n_vars : next->lookback,
                   along_n ? a.lookback : a.n_vars, next->seconds / a.seconds});
  }
  return out;
}

}  // namespace

std::vector<ScalingRatio> n_ratios(const std::vector<BenchRow>& rows) { return ratios_along(rows, true); }
std::vector<ScalingRatio> l_ratios(const std::vector<BenchRow>& rows) { return ratios_along(rows, false); }

}  // namespace timepro
