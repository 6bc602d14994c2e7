// SPDX-License-Identifier: Apache-2.0
#include "timepro/model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace timepro {

using nlohmann::json;

Index patch_count(Index lookback, Index patch_len, Index stride) {
  if (patch_len < 1 || stride < 1) throw Error("patch length and stride must be positive");
  if (patch_len > lookback) {
    throw Error("patch length " + std::to_string(patch_len) + " exceeds lookback " +
                std::to_string(lookback));
  }
  return (lookback - patch_len) / stride + 2;
}

std::vector<Index> patch_starts(Index lookback, Index patch_len, Index stride) {
  const Index p = patch_count(lookback, patch_len, stride);
  std::vector<Index> starts(static_cast<std::size_t>(p));
  for (Index i = 0; i < p; ++i) starts[static_cast<std::size_t>(i)] = i * stride;
  return starts;
}

Array extract_patches(const Array& series, Index rows, Index lookback, Index patch_len,
                      Index stride) {
  if (series.size() != rows * lookback) throw ShapeError("extract_patches: series size mismatch");
  const std::vector<Index> starts = patch_starts(lookback, patch_len, stride);
  const Index p = static_cast<Index>(starts.size());
  const Index padded = lookback + stride;
  Array out(rows * p * patch_len);
  std::vector<double> buf(static_cast<std::size_t>(padded));
  for (Index r = 0; r < rows; ++r) {
    const double* src = series.data() + r * lookback;
    for (Index t = 0; t < padded; ++t) buf[static_cast<std::size_t>(t)] = src[std::min(t, lookback - 1)];
    for (Index i = 0; i < p; ++i) {
      const Index s = starts[static_cast<std::size_t>(i)];
      for (Index k = 0; k < patch_len; ++k) {
        out((r * p + i) * patch_len + k) = buf[static_cast<std::size_t>(s + k)];
      }
    }
  }
  return out;
}

Index ModelConfig::n_patches() const { return patch_count(lookback, patch_len, stride); }

void ModelConfig::validate() const {
  if (lookback < 2) throw Error("lookback must be >= 2");
  if (horizon < 1) throw Error("horizon must be >= 1");
  if (stride > patch_len) throw Error("stride must not exceed patch length");
  n_patches();
  if (n_layers < 1) throw Error("need at least one ProBlock");
  if (ffn_ratio < 1) throw Error("ffn_ratio must be >= 1");
  hypermamba_options().validate();
}

HyperMambaOptions ModelConfig::hypermamba_options() const {
  HyperMambaOptions o;
  o.patches = n_patches();
  o.embed_dim = embed_dim;
  o.n_samples = n_samples;
  o.variant = scan_variant;
  o.adaptive_time_tune = adaptive_time_tune;
  o.skip_term = skip_term;
  o.residual_sampling = residual_sampling;
  return o;
}

json to_json(const ModelConfig& c) {
  return json{{"lookback", c.lookback},
              {"horizon", c.horizon},
              {"n_vars", c.n_vars},
              {"patch_len", c.patch_len},
              {"stride", c.stride},
              {"embed_dim", c.embed_dim},
              {"n_layers", c.n_layers},
              {"n_samples", c.n_samples},
              {"ffn_ratio", c.ffn_ratio},
              {"adaptive_time_tune", c.adaptive_time_tune},
              {"skip_term", c.skip_term},
              {"residual_sampling", c.residual_sampling},
              {"scan_variant", std::string(to_string(c.scan_variant))}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.lookback = j.at("lookback").get<Index>();
  c.horizon = j.at("horizon").get<Index>();
  c.n_vars = j.at("n_vars").get<Index>();
  c.patch_len = j.at("patch_len").get<Index>();
  c.stride = j.at("stride").get<Index>();
  c.embed_dim = j.at("embed_dim").get<Index>();
  c.n_layers = j.at("n_layers").get<Index>();
  c.n_samples = j.at("n_samples").get<Index>();
  c.ffn_ratio = j.at("ffn_ratio").get<Index>();
  c.adaptive_time_tune = j.at("adaptive_time_tune").get<bool>();
  c.skip_term = j.at("skip_term").get<bool>();
  c.residual_sampling = j.at("residual_sampling").get<bool>();
  c.scan_variant = parse_scan_variant(j.at("scan_variant").get<std::string>());
  return c;
}

RevInResult revin_normalize(const Tensor& x, double eps) {
  if (x.rank() == 0 || x.dim(-1) < 2) throw ShapeError("revin_normalize needs at least 2 steps");
  const Index width = x.dim(-1);
  const Index rows = x.numel() / width;
  Eigen::Map<const RowMatrix> xm(x.data().data(), rows, width);
  RevInStats stats;
  stats.eps = eps;
  stats.mean = xm.rowwise().mean().array();
  stats.std.resize(rows);
  Array out(x.numel());
  Eigen::Map<RowMatrix> om(out.data(), rows, width);
  for (Index r = 0; r < rows; ++r) {
    const double var = (xm.row(r).array() - stats.mean(r)).square().mean();
    stats.std(r) = std::sqrt(var + eps);
    om.row(r) = (xm.row(r).array() - stats.mean(r)) / stats.std(r);
  }
  return {Tensor::from(x.shape(), std::move(out)), std::move(stats)};
}

Tensor revin_denormalize(const Tensor& y, const RevInStats& stats) {
  const Index rows = y.numel() / std::max<Index>(y.dim(-1), 1);
  if (rows != stats.mean.size()) {
    throw ShapeError("revin_denormalize: " + std::to_string(rows) + " rows vs " +
                     std::to_string(stats.mean.size()) + " stored statistics");
  }
  return row_affine(y, stats.std, stats.mean);
}

Tensor time_ffn(const Tensor& e, const TimeFfnWeights& w) {
  if (e.rank() != 4) throw ShapeError("time_ffn expects [B, N, P, D]");
  Tensor along_time = transpose_last2(e);  // [B, N, D, P]
  Tensor hidden = silu(w.up(along_time));
  return transpose_last2(w.down(hidden));
}

Tensor problock_forward(const Tensor& e, const ProBlockWeights& w, const HyperMambaOptions& opt,
                        ForwardTrace* trace) {
  Tensor x = e;
  if (w.hyper) {
    Tensor normed = layer_norm(x, w.norm1_gain, w.norm1_offset);
    Tensor mixed = hypermamba_forward(normed, *w.hyper, opt);
    if (trace) {
      trace->hyper_inputs.push_back(normed);
      trace->hyper_outputs.push_back(mixed);
    }
    x = add(x, mixed);
  }
  return add(x, time_ffn(layer_norm(x, w.norm2_gain, w.norm2_offset), w.ffn));
}

TimeProModel::TimeProModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const Index p = cfg_.n_patches();
  const Index d = cfg_.embed_dim;
  const HyperMambaOptions opt = cfg_.hypermamba_options();

  embed_ = make_linear(params_, "embed", cfg_.patch_len, d, true, rng);
  position_ = params_.add("embed.position", Tensor::from({p, d}, rng.uniform_array(p * d, -0.02, 0.02)));
  for (Index i = 0; i < cfg_.n_layers; ++i) {
    const std::string prefix = "blocks." + std::to_string(i);
    ProBlockWeights b;
    if (cfg_.scan_variant != ScanVariant::none) {
      b.norm1_gain = params_.add(prefix + ".norm1.gain", Tensor::full({d}, 1.0));
      b.norm1_offset = params_.add(prefix + ".norm1.offset", Tensor::zeros({d}));
      b.hyper = make_hypermamba_weights(params_, prefix + ".hyper", opt, rng);
    }
    b.norm2_gain = params_.add(prefix + ".norm2.gain", Tensor::full({d}, 1.0));
    b.norm2_offset = params_.add(prefix + ".norm2.offset", Tensor::zeros({d}));
    b.ffn.up = make_linear(params_, prefix + ".ffn.up", p, cfg_.ffn_ratio * p, true, rng);
    b.ffn.down = make_linear(params_, prefix + ".ffn.down", cfg_.ffn_ratio * p, p, true, rng);
    blocks_.push_back(std::move(b));
  }
  head_ = make_linear(params_, "head", p * d, cfg_.horizon, true, rng);
}

Tensor TimeProModel::patch_embed(const Tensor& x_norm) const {
  const Index b = x_norm.dim(0);
  const Index n = x_norm.dim(1);
  const Index p = cfg_.n_patches();
  Tensor patches = Tensor::from(
      {b * n * p, cfg_.patch_len},
      extract_patches(x_norm.data(), b * n, cfg_.lookback, cfg_.patch_len, cfg_.stride));
  Tensor e = reshape(embed_(patches), {b, n, p, cfg_.embed_dim});
  return add_bcast(e, position_);
}

Tensor TimeProModel::forward(const Tensor& x, ForwardTrace* trace) const {
  const bool single = x.rank() == 2;
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("forward expects [N, L] or [B, N, L]");
  if (x.dim(-1) != cfg_.lookback) {
    throw ShapeError("forward: input lookback " + std::to_string(x.dim(-1)) + " != configured " +
                     std::to_string(cfg_.lookback));
  }
  const Index b = single ? 1 : x.dim(0);
  const Index n = x.dim(-2);
  const Tensor x3 = single ? reshape(x, {1, n, cfg_.lookback}) : x;
  const RevInResult rev = revin_normalize(x3);
  Tensor e = patch_embed(rev.normalized);
  const HyperMambaOptions opt = cfg_.hypermamba_options();
  for (const ProBlockWeights& block : blocks_) e = problock_forward(e, block, opt, trace);
  const Index flat = cfg_.n_patches() * cfg_.embed_dim;
  Tensor y = reshape(head_(reshape(e, {b * n, flat})), {b, n, cfg_.horizon});
  y = revin_denormalize(y, rev.stats);
  return single ? reshape(y, {n, cfg_.horizon}) : y;
}

json TimeProModel::to_json() const {
  json weights = json::array();
  for (const auto& [name, t] : params_.entries()) {
    weights.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"data", std::vector<double>(t.data().begin(), t.data().end())}});
  }
  return json{{"format", "timepro-checkpoint"},
              {"version", kCheckpointVersion},
              {"config", timepro::to_json(cfg_)},
              {"weights", std::move(weights)}};
}

void TimeProModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << to_json().dump() << '\n';
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

TimeProModel TimeProModel::from_json(const json& j, const std::optional<ModelConfig>& cfg) {
  if (!j.contains("version")) throw CheckpointError("checkpoint has no version field");
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + j.at("version").dump());
  }
  const ModelConfig file_cfg = model_config_from_json(j.at("config"));
  TimeProModel model(cfg.value_or(file_cfg));
  const json& weights = j.at("weights");
  std::size_t matched = 0;
  for (const auto& [name, param] : model.params_.entries()) {
    const json* entry = nullptr;
    for (const json& w : weights) {
      if (w.at("name").get<std::string>() == name) {
        entry = &w;
        break;
      }
    }
    if (!entry) throw CheckpointError("missing weight " + name);
    const Shape shape = entry->at("shape").get<Shape>();
    if (shape != param.shape()) {
      throw CheckpointError("weight " + name + ": checkpoint shape " + timepro::to_string(shape) +
                            ", expected " + timepro::to_string(param.shape()));
    }
    const std::vector<double> data = entry->at("data").get<std::vector<double>>();
    if (static_cast<Index>(data.size()) != param.numel()) {
      throw CheckpointError("weight " + name + ": data length does not match its shape");
    }
    Tensor t = param;
    t.mutable_data() = Eigen::Map<const Array>(data.data(), static_cast<Index>(data.size()));
    ++matched;
  }
  if (matched != weights.size()) {
    for (const json& w : weights) {
      const std::string name = w.at("name").get<std::string>();
      if (!model.params_.contains(name)) throw CheckpointError("unexpected weight " + name);
    }
  }
  return model;
}

TimeProModel TimeProModel::load(const std::filesystem::path& path,
                                const std::optional<ModelConfig>& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return from_json(j, cfg);
}

}  // namespace timepro
