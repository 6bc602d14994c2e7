// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include "timepro/data.hpp"
#include "timepro/model.hpp"
#include "timepro/train_eval.hpp"

#include <CLI11.hpp>
#include <curl/curl.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>

namespace timepro::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class ConfigError : public Error {
 public:
  using Error::Error;
};

// --config is consumed by expand_config before parsing; the option exists for --help.
std::string config_placeholder;

std::string default_data_dir() {
  const char* env = std::getenv("TIMEPRO_DATA_DIR");
  return env && *env ? env : "data";
}

/// Explicit paths win; bare names fall back to the data directory.
fs::path resolve_data(const std::string& data) {
  if (data.empty()) throw ConfigError("--data is required");
  const fs::path p(data);
  if (fs::exists(p)) return p;
  const fs::path in_dir = fs::path(default_data_dir()) / p;
  if (p.is_relative() && fs::exists(in_dir)) return in_dir;
  throw DataError("data file not found: " + p.string());
}

SeriesDataset load_standardized(const std::string& data) {
  return standardize(load_csv(resolve_data(data)));
}

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// Shared option groups.

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string variant = "hyper";
  std::string data;
  std::string out = "runs";
  std::uint64_t seed = 0;
  bool with_baselines = false;
};

using ModelField = std::function<void(ModelConfig& dst, const ModelConfig& src)>;

/// Model flags, each paired with a copier so explicit flags can be laid over a checkpoint config.
struct ModelOptions {
  std::vector<std::pair<CLI::Option*, ModelField>> fields;
  CLI::Option* variant = nullptr;

  void overlay(ModelConfig& cfg, const RunConfig& rc) const {
    for (const auto& [opt, copy] : fields) {
      if (opt->count() > 0) copy(cfg, rc.model);
    }
    if (variant && variant->count() > 0) cfg = apply_variant(cfg, rc.variant);
  }
};

template <typename T>
void add_field(CLI::App* app, ModelOptions& mo, RunConfig& rc, const std::string& flag, T ModelConfig::*member,
               const std::string& help) {
  CLI::Option* opt = app->add_option(flag, rc.model.*member, help)->capture_default_str();
  mo.fields.emplace_back(opt, [member](ModelConfig& dst, const ModelConfig& src) { dst.*member = src.*member; });
}

ModelOptions add_model_options(CLI::App* app, RunConfig& rc, bool variant_option = true) {
  ModelOptions mo;
  app->option_defaults()->group("Model");
  add_field(app, mo, rc, "--lookback", &ModelConfig::lookback, "Lookback window L");
  add_field(app, mo, rc, "--horizon", &ModelConfig::horizon, "Forecast horizon H");
  add_field(app, mo, rc, "--patch-len", &ModelConfig::patch_len, "Patch length");
  add_field(app, mo, rc, "--stride", &ModelConfig::stride, "Patch stride");
  add_field(app, mo, rc, "--d-model", &ModelConfig::embed_dim, "Embedding width D (even)");
  add_field(app, mo, rc, "--layers", &ModelConfig::n_layers, "Number of ProBlocks");
  add_field(app, mo, rc, "--samples", &ModelConfig::n_samples, "Time-tune samples M (odd)");
  add_field(app, mo, rc, "--ffn-ratio", &ModelConfig::ffn_ratio, "TimeFFN expansion ratio");
  add_field(app, mo, rc, "--skip-term", &ModelConfig::skip_term, "Use the D skip term in scans");
  add_field(app, mo, rc, "--residual-sampling", &ModelConfig::residual_sampling,
            "Add the plain state to the resampled state");
  if (variant_option) {
    mo.variant = app->add_option("--variant", rc.variant,
                                 "hyper, var_only, time_only, time_then_var, non_adaptive, baseline, "
                                 "adaptive or adaptive_off")
                     ->capture_default_str();
  }
  app->option_defaults()->group("Options");
  return mo;
}

void add_train_options(CLI::App* app, RunConfig& rc) {
  auto* g = app;
  const std::string group = "Training";
  g->add_option("--lr", rc.train.lr0, "Initial learning rate")->capture_default_str()->group(group);
  g->add_option("--batch-size", rc.train.batch_size, "Training batch size")->capture_default_str()->group(group);
  g->add_option("--epochs", rc.train.max_epochs, "Maximum epochs")->capture_default_str()->group(group);
  g->add_option("--patience", rc.train.patience, "Early-stopping patience in epochs")
      ->capture_default_str()
      ->group(group);
  g->add_option("--clip-norm", rc.train.clip_norm, "Global gradient-norm clip (0 disables)")
      ->capture_default_str()
      ->group(group);
  g->add_option("--max-batches", rc.train.max_batches_per_epoch,
                "Cap on training batches per epoch (0 = all windows)")
      ->capture_default_str()
      ->group(group);
  g->add_option("--eval-batch-size", rc.train.eval_batch_size, "Batch size for evaluation")
      ->capture_default_str()
      ->group(group);
}

void add_common(CLI::App* app, RunConfig& rc, bool with_out = true) {
  app->add_option("--config", config_placeholder, "TOML/INI file of flag values; explicit flags override it");
  app->add_option("--data", rc.data, "Dataset CSV (bare names are looked up in $TIMEPRO_DATA_DIR)")
      ->capture_default_str();
  app->add_option("--seed", rc.seed, "Random seed")->capture_default_str();
  if (with_out) app->add_option("--out", rc.out, "Output directory")->capture_default_str();
}

ModelConfig resolved_model(const RunConfig& rc, const SeriesDataset& ds) {
  ModelConfig cfg = apply_variant(rc.model, rc.variant);
  cfg.n_vars = ds.n_vars();
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

json metrics_doc(const std::string& dataset, const ModelConfig& cfg, const std::string& variant,
                 std::uint64_t seed, const Metrics& m) {
  return json{{"dataset", dataset}, {"horizon", cfg.horizon}, {"variant", variant},
              {"seed", seed},       {"mse", m.mse},            {"mae", m.mae}};
}

struct Baselines {
  Metrics persistence;
  Metrics channel_linear;
};

Baselines run_baselines(const SeriesDataset& ds, Index lookback, Index horizon, Segment seg) {
  Baselines b;
  b.persistence = evaluate_forecaster([&](const Tensor& x) { return persistence_forecast(x, horizon); },
                                      ds, seg, lookback, horizon);
  const ChannelLinear lin = fit_channel_linear(ds, lookback, horizon);
  b.channel_linear = evaluate_forecaster(lin, ds, seg, lookback, horizon);
  return b;
}

/// Trains one model under `rc`, writing checkpoint, log and metrics into `dir`.
json train_into(const RunConfig& rc, const SeriesDataset& ds, const std::string& variant,
                const fs::path& dir, std::ostream& out) {
  RunConfig local = rc;
  local.variant = variant;
  const ModelConfig cfg = resolved_model(local, ds);
  TrainConfig tc = rc.train;
  tc.seed = rc.seed;
  try {
    tc.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  ensure_dir(dir);
  TimeProModel model(cfg, rc.seed);
  std::ofstream log(dir / "log.csv", std::ios::binary);
  if (!log) throw Error("cannot write " + (dir / "log.csv").string());
  write_epoch_log_header(log);
  const TrainResult result = train(model, ds, tc, [&](const EpochRecord& r) {
    write_epoch_record(log, r);
    out << "epoch " << r.epoch << "  train_mse " << fmt(r.train_mse) << "  val_mse " << fmt(r.val_mse)
        << "  lr " << fmt(r.lr, "%.3e") << '\n';
    out.flush();
  });
  model.save(dir / "checkpoint.json");
  const Metrics test = evaluate(model, ds, Segment::test, tc.eval_batch_size);
  json doc = metrics_doc(ds.name, cfg, variant, rc.seed, test);
  doc["best_epoch"] = result.best_epoch;
  doc["best_val_mse"] = result.best_val_mse;
  if (rc.with_baselines) {
    const Baselines b = run_baselines(ds, cfg.lookback, cfg.horizon, Segment::test);
    doc["baselines"] = {{"persistence", {{"mse", b.persistence.mse}, {"mae", b.persistence.mae}}},
                        {"channel_linear", {{"mse", b.channel_linear.mse}, {"mae", b.channel_linear.mae}}}};
  }
  write_json(dir / "metrics.json", doc);
  out << "test mse " << fmt(test.mse) << "  mae " << fmt(test.mae) << "  (best epoch "
      << result.best_epoch << ")\n";
  return doc;
}

void print_table(std::ostream& out, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()));
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      out << r[c] << std::string(width[c] - r[c].size() + (c + 1 < r.size() ? 2 : 0), ' ');
    }
    out << '\n';
  }
}

void write_matrix_csv(const fs::path& path, const RowMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << fmt(m(i, j), "%.10f");
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// fetch-data

const std::map<std::string, std::string>& known_urls() {
  static const std::map<std::string, std::string> urls = {
      {"ETTh1.csv", "https://raw.githubusercontent.com/zhouhaoyi/ETDataset/main/ETT-small/ETTh1.csv"},
      {"ETTh2.csv", "https://raw.githubusercontent.com/zhouhaoyi/ETDataset/main/ETT-small/ETTh2.csv"},
      {"ETTm1.csv", "https://raw.githubusercontent.com/zhouhaoyi/ETDataset/main/ETT-small/ETTm1.csv"},
      {"ETTm2.csv", "https://raw.githubusercontent.com/zhouhaoyi/ETDataset/main/ETT-small/ETTm2.csv"},
  };
  return urls;
}

std::size_t curl_write(char* ptr, std::size_t size, std::size_t n, void* user) {
  static_cast<std::ofstream*>(user)->write(ptr, static_cast<std::streamsize>(size * n));
  return size * n;
}

void download(const std::string& url, const fs::path& dest) {
  const fs::path tmp = fs::path(dest.string() + ".part");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    CURL* curl = curl_easy_init();
    if (!curl) throw DataError("curl initialisation failed");
    curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
    curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
    curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
    curl_easy_setopt(curl, CURLOPT_CONNECTTIMEOUT, 30L);
    curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, curl_write);
    curl_easy_setopt(curl, CURLOPT_WRITEDATA, &out);
    const CURLcode rc = curl_easy_perform(curl);
    curl_easy_cleanup(curl);
    if (rc != CURLE_OK) {
      out.close();
      fs::remove(tmp);
      throw DataError("download of " + url + " failed: " + curl_easy_strerror(rc));
    }
  }
  fs::rename(tmp, dest);
}

/// Verifies `file` against the manifest, or records it when it has no entry yet.
void check_manifest(const fs::path& dir, const std::string& file, std::ostream& out) {
  const fs::path manifest = dir / "MANIFEST.tsv";
  std::vector<ManifestEntry> entries;
  if (fs::exists(manifest)) entries = read_manifest(manifest);
  for (const ManifestEntry& e : entries) {
    if (e.filename != file) continue;
    const std::string problem = verify_file(dir, e);
    if (!problem.empty()) throw DataError("checksum verification failed: " + problem);
    out << file << ": verified\n";
    return;
  }
  entries.push_back(describe_file(dir / file));
  write_manifest(manifest, entries);
  out << file << ": recorded sha256 " << entries.back().sha256 << '\n';
}

// ---------------------------------------------------------------------------

Segment segment_option(const std::string& s) {
  try {
    return parse_segment(s);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

int classify(std::ostream& err, const char* kind, const std::string& what, int code) {
  err << "error[" << kind << "]: " << what << '\n';
  return code;
}

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

/// Replaces `--config FILE` with the file's key/value pairs as flags. Keys already
/// given on the command line are left out so explicit flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> rest;
  std::string file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ConfigError("--config needs a file");
      file = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (file.empty()) return rest;
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file);
  std::vector<std::string> expanded;
  for (const CLI::ConfigItem& item : CLI::ConfigTOML().from_config(in)) {
    if (item.name.empty() || !std::isalpha(static_cast<unsigned char>(item.name.front()))) continue;
    std::string flag = "--" + item.name;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (has_flag(rest, flag)) continue;
    expanded.push_back(flag + "=" + CLI::detail::join(item.inputs, ","));
  }
  // Subcommand name first, then file values, then the remaining explicit flags.
  if (!rest.empty()) expanded.insert(expanded.begin(), rest.front());
  expanded.insert(expanded.end(), rest.begin() + (rest.empty() ? 0 : 1), rest.end());
  return expanded;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"TimePro: selective state-space forecasting with adaptive time-tune"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  // train
  RunConfig train_rc;
  train_rc.out = "runs/train";
  CLI::App* train_cmd = app.add_subcommand("train", "Train one model, writing checkpoint, log and metrics");
  add_common(train_cmd, train_rc);
  add_model_options(train_cmd, train_rc);
  add_train_options(train_cmd, train_rc);
  train_cmd->add_flag("--with-baselines", train_rc.with_baselines,
                      "Also record persistence and channel-linear test metrics");

  // eval
  RunConfig eval_rc;
  eval_rc.out = "";
  std::vector<std::string> checkpoints;
  std::vector<Index> horizons;
  std::vector<std::string> baselines;
  std::string eval_segment = "test";
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate checkpoints and baselines on a segment");
  add_common(eval_cmd, eval_rc);
  const ModelOptions eval_model = add_model_options(eval_cmd, eval_rc);
  eval_cmd->add_option("--checkpoint", checkpoints, "Checkpoint file (repeatable, one per horizon)")
      ->required();
  eval_cmd->add_option("--horizons", horizons, "Horizons to report, e.g. 96,192,336,720")->delimiter(',');
  eval_cmd->add_option("--baseline", baselines, "persistence or channel_linear (repeatable)")
      ->delimiter(',')
      ->check(CLI::IsMember({"persistence", "channel_linear"}));
  eval_cmd->add_option("--segment", eval_segment, "train, val or test")->capture_default_str();

  // ablate
  RunConfig ablate_rc;
  ablate_rc.out = "runs/ablate";
  std::vector<std::string> ablate_variants;
  std::vector<std::uint64_t> ablate_seeds;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Train and test scan variants under identical settings");
  add_common(ablate_cmd, ablate_rc);
  add_model_options(ablate_cmd, ablate_rc, false);
  ablate_cmd->add_option("--variant", ablate_variants, "Variants to train (default hyper,non_adaptive)")
      ->delimiter(',')
      ->group("Model");
  add_train_options(ablate_cmd, ablate_rc);
  ablate_cmd->add_option("--seeds", ablate_seeds, "Seeds to run (default: --seed)")->delimiter(',');

  // correlate
  RunConfig corr_rc;
  corr_rc.out = "runs/correlate";
  std::string corr_checkpoint;
  Index corr_samples = 32;
  std::string corr_segment = "test";
  CLI::App* corr_cmd = app.add_subcommand("correlate", "Variable-correlation report around the first HyperMamba");
  add_common(corr_cmd, corr_rc);
  corr_cmd->add_option("--checkpoint", corr_checkpoint, "Trained checkpoint")->required();
  corr_cmd->add_option("--samples", corr_samples, "Number of evenly spaced windows")->capture_default_str();
  corr_cmd->add_option("--segment", corr_segment, "train, val or test")->capture_default_str();

  // bench
  std::vector<Index> bench_n = {8, 16, 32, 64, 128};
  std::vector<Index> bench_l = {96};
  BenchOptions bench_opt;
  std::string bench_out = "runs/bench";
  CLI::App* bench_cmd = app.add_subcommand("bench", "Time HyperMamba forward passes over an (N, L) grid");
  bench_cmd->add_option("--config", config_placeholder, "TOML/INI file of flag values; explicit flags override it");
  bench_cmd->add_option("--n", bench_n, "Variable counts")->delimiter(',')->capture_default_str();
  bench_cmd->add_option("--l", bench_l, "Lookback lengths")->delimiter(',')->capture_default_str();
  bench_cmd->add_option("--batch", bench_opt.batch, "Batch size")->capture_default_str();
  bench_cmd->add_option("--d-model", bench_opt.embed_dim, "Embedding width D")->capture_default_str();
  bench_cmd->add_option("--repeats", bench_opt.repeats, "Timed repeats per point (median)")
      ->capture_default_str();
  bench_cmd->add_option("--seed", bench_opt.seed, "Random seed")->capture_default_str();
  bench_cmd->add_option("--out", bench_out, "Output directory")->capture_default_str();

  // gradcheck
  Index grad_instances = 20;
  std::uint64_t grad_seed = 0;
  double grad_step = 1e-3;
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Reverse-mode vs finite-difference gradient suite");
  grad_cmd->add_option("--instances", grad_instances, "Random instances per module")->capture_default_str();
  grad_cmd->add_option("--seed", grad_seed, "Base seed")->capture_default_str();
  grad_cmd->add_option("--step", grad_step, "Finite-difference step (fourth-order central stencil)")
      ->capture_default_str();

  // fetch-data
  std::string fetch_dir = default_data_dir();
  std::vector<std::string> fetch_files = {"ETTh1.csv"};
  std::string fetch_url;
  bool fetch_synthetic = false;
  std::string synth_kind = "multi_delay";
  SyntheticSpec synth;
  std::string synth_name;
  CLI::App* fetch_cmd = app.add_subcommand("fetch-data", "Download and checksum datasets, or write a synthetic set");
  fetch_cmd->add_option("--dir", fetch_dir, "Data directory (default $TIMEPRO_DATA_DIR or ./data)")
      ->capture_default_str();
  fetch_cmd->add_option("--file", fetch_files, "Files to fetch: ETTh1.csv, ETTh2.csv, ETTm1.csv, ETTm2.csv")
      ->delimiter(',')
      ->capture_default_str();
  fetch_cmd->add_option("--url", fetch_url, "Explicit source URL for a single --file");
  fetch_cmd->add_flag("--synthetic", fetch_synthetic, "Generate the seeded synthetic dataset instead");
  fetch_cmd->add_option("--kind", synth_kind, "multi_delay or ar1")
      ->check(CLI::IsMember({"multi_delay", "ar1"}))
      ->capture_default_str();
  fetch_cmd->add_option("--length", synth.length, "Synthetic rows")->capture_default_str();
  fetch_cmd->add_option("--vars", synth.n_vars, "Synthetic variables")->capture_default_str();
  fetch_cmd->add_option("--seed", synth.seed, "Synthetic seed")->capture_default_str();
  fetch_cmd->add_option("--noise", synth.noise, "Synthetic noise level")->capture_default_str();
  fetch_cmd->add_option("--name", synth_name, "Synthetic file name (default synthetic.csv / synthetic_ar1.csv)");

  std::vector<std::string> expanded;
  try {
    expanded = expand_config(args);
  } catch (const std::exception& e) {
    return classify(err, "config", e.what(), kConfigError);
  }
  std::vector<const char*> argv = {"timepro"};
  for (const auto& a : expanded) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return classify(err, "config", e.what(), kConfigError);
  }

  try {
    if (train_cmd->parsed()) {
      const SeriesDataset ds = load_standardized(train_rc.data);
      train_into(train_rc, ds, train_rc.variant, train_rc.out, out);
      return kOk;
    }

    if (eval_cmd->parsed()) {
      const Segment seg = segment_option(eval_segment);
      const SeriesDataset ds = load_standardized(eval_rc.data);
      std::vector<std::pair<json, ModelConfig>> loaded;
      for (const std::string& path : checkpoints) {
        json j = read_json(path);
        ModelConfig cfg;
        try {
          cfg = model_config_from_json(j.at("config"));
        } catch (const json::exception& e) {
          throw CheckpointError(path + ": bad config: " + e.what());
        }
        eval_model.overlay(cfg, eval_rc);
        loaded.emplace_back(std::move(j), cfg);
      }
      if (horizons.empty()) {
        for (const auto& [j, cfg] : loaded) horizons.push_back(cfg.horizon);
      }
      std::vector<std::vector<std::string>> table = {{"model", "variant", "horizon", "mse", "mae"}};
      json rows = json::array();
      for (Index h : horizons) {
        const auto it = std::find_if(loaded.begin(), loaded.end(),
                                     [h](const auto& e) { return e.second.horizon == h; });
        if (it == loaded.end()) throw ConfigError("no checkpoint for horizon " + std::to_string(h));
        TimeProModel model = TimeProModel::from_json(it->first, it->second);
        if (model.config().n_vars != ds.n_vars()) {
          throw ConfigError("checkpoint expects " + std::to_string(model.config().n_vars) +
                            " variables, data has " + std::to_string(ds.n_vars()));
        }
        const Metrics m = evaluate(model, ds, seg);
        const std::string variant(to_string(model.config().scan_variant));
        table.push_back({"timepro", variant, std::to_string(h), fmt(m.mse), fmt(m.mae)});
        rows.push_back({{"model", "timepro"}, {"variant", variant}, {"horizon", h}, {"mse", m.mse}, {"mae", m.mae}});
      }
      for (const std::string& b : baselines) {
        for (Index h : horizons) {
          const Index lookback = loaded.front().second.lookback;
          const Baselines res = run_baselines(ds, lookback, h, seg);
          const Metrics m = b == "persistence" ? res.persistence : res.channel_linear;
          table.push_back({b, "-", std::to_string(h), fmt(m.mse), fmt(m.mae)});
          rows.push_back({{"model", b}, {"variant", "-"}, {"horizon", h}, {"mse", m.mse}, {"mae", m.mae}});
        }
      }
      print_table(out, table);
      if (!eval_rc.out.empty()) {
        ensure_dir(eval_rc.out);
        write_json(fs::path(eval_rc.out) / "eval.json",
                   json{{"dataset", ds.name}, {"segment", std::string(to_string(seg))}, {"rows", rows}});
      }
      return kOk;
    }

    if (ablate_cmd->parsed()) {
      const SeriesDataset ds = load_standardized(ablate_rc.data);
      if (ablate_variants.empty()) ablate_variants = {"hyper", "non_adaptive"};
      if (ablate_seeds.empty()) ablate_seeds = {ablate_rc.seed};
      for (const std::string& v : ablate_variants) apply_variant(ablate_rc.model, v);  // reject bad names early
      json rows = json::array();
      std::vector<std::vector<std::string>> table = {{"variant", "seed", "mse", "mae"}};
      std::map<std::string, std::vector<double>> by_variant;
      for (const std::string& v : ablate_variants) {
        for (std::uint64_t s : ablate_seeds) {
          RunConfig rc = ablate_rc;
          rc.seed = s;
          const fs::path dir = fs::path(ablate_rc.out) / (v + "_seed" + std::to_string(s));
          out << "== " << v << " seed " << s << '\n';
          const json doc = train_into(rc, ds, v, dir, out);
          rows.push_back(doc);
          by_variant[v].push_back(doc["mse"].get<double>());
          table.push_back({v, std::to_string(s), fmt(doc["mse"].get<double>()), fmt(doc["mae"].get<double>())});
        }
      }
      json medians = json::object();
      for (const auto& [v, values] : by_variant) medians[v] = median(values);
      ensure_dir(ablate_rc.out);
      write_json(fs::path(ablate_rc.out) / "ablation.json",
                 json{{"dataset", ds.name}, {"runs", rows}, {"median_mse", medians}});
      print_table(out, table);
      return kOk;
    }

    if (corr_cmd->parsed()) {
      const Segment seg = segment_option(corr_segment);
      const SeriesDataset ds = load_standardized(corr_rc.data);
      const TimeProModel model = TimeProModel::from_json(read_json(corr_checkpoint));
      const CorrelationSummary s = correlation_summary(model, ds, seg, corr_samples);
      const fs::path dir(corr_rc.out);
      ensure_dir(dir);
      const CorrelationReport& first = s.reports.front();
      write_matrix_csv(dir / "gt_corr.csv", first.gt_corr);
      write_matrix_csv(dir / "pre_hyper_corr.csv", first.pre_hyper_corr);
      write_matrix_csv(dir / "post_hyper_corr.csv", first.post_hyper_corr);
      std::ofstream dist(dir / "distances.csv", std::ios::binary);
      dist << "origin,pre_distance,post_distance\n";
      for (std::size_t i = 0; i < s.reports.size(); ++i) {
        dist << s.origins[i] << ',' << fmt(s.reports[i].pre_distance, "%.10f") << ','
             << fmt(s.reports[i].post_distance, "%.10f") << '\n';
      }
      write_json(dir / "correlation.json", json{{"dataset", ds.name},
                                                {"samples", s.reports.size()},
                                                {"matrix_origin", s.origins.front()},
                                                {"median_pre_distance", s.median_pre_distance},
                                                {"median_post_distance", s.median_post_distance}});
      out << "median ||pre - gt||_F  " << fmt(s.median_pre_distance) << '\n'
          << "median ||post - gt||_F " << fmt(s.median_post_distance) << '\n';
      return kOk;
    }

    if (bench_cmd->parsed()) {
      const std::vector<BenchRow> rows = bench_scaling(bench_n, bench_l, bench_opt);
      ensure_dir(bench_out);
      std::ofstream csv(fs::path(bench_out) / "bench.csv", std::ios::binary);
      csv << "n_vars,lookback,patches,seconds\n";
      std::vector<std::vector<std::string>> table = {{"n_vars", "lookback", "patches", "seconds"}};
      for (const BenchRow& r : rows) {
        csv << r.n_vars << ',' << r.lookback << ',' << r.patches << ',' << fmt(r.seconds, "%.6e") << '\n';
        table.push_back({std::to_string(r.n_vars), std::to_string(r.lookback), std::to_string(r.patches),
                         fmt(r.seconds, "%.6e")});
      }
      print_table(out, table);
      for (const ScalingRatio& r : n_ratios(rows)) {
        out << "N " << r.from << " -> " << r.to << " at L=" << r.fixed << ": x" << fmt(r.ratio, "%.3f") << '\n';
      }
      for (const ScalingRatio& r : l_ratios(rows)) {
        out << "L " << r.from << " -> " << r.to << " at N=" << r.fixed << ": x" << fmt(r.ratio, "%.3f") << '\n';
      }
      return kOk;
    }

    if (grad_cmd->parsed()) {
      bool ok = true;
      std::vector<std::vector<std::string>> table = {{"module", "instances", "entries", "max_rel_error", "tolerance", "status"}};
      const std::vector<GradSuiteEntry> suite =
          run_grad_suite(grad_instances, grad_seed, GradCheckOptions{grad_step, Stencil::central4, 0});
      for (const GradSuiteEntry& e : suite) {
        ok = ok && e.passed();
        table.push_back({e.name, std::to_string(e.instances), std::to_string(e.entries),
                         fmt(e.max_rel_error, "%.3e"), fmt(e.tolerance, "%.0e"), e.passed() ? "PASS" : "FAIL"});
      }
      print_table(out, table);
      if (!ok) {
        for (const GradSuiteEntry& e : suite) {
          if (e.passed()) continue;
          err << e.name << ": instance " << e.worst_instance << " input " << e.worst_input << " entry "
              << e.worst_entry << " analytic " << fmt(e.worst_analytic, "%.10e") << " numeric "
              << fmt(e.worst_numeric, "%.10e") << '\n';
        }
      }
      if (!ok) return classify(err, "numeric", "gradient check exceeded tolerance", kNumericError);
      return kOk;
    }

    if (fetch_cmd->parsed()) {
      const fs::path dir(fetch_dir);
      ensure_dir(dir);
      if (fetch_synthetic) {
        synth.kind = synth_kind == "ar1" ? SyntheticKind::ar1 : SyntheticKind::multi_delay;
        const std::string name =
            !synth_name.empty() ? synth_name : (synth.kind == SyntheticKind::ar1 ? "synthetic_ar1.csv" : "synthetic.csv");
        write_csv(make_synthetic(synth), dir / name);
        out << "wrote " << (dir / name).string() << '\n';
        return kOk;
      }
      if (!fetch_url.empty() && fetch_files.size() != 1) throw ConfigError("--url needs exactly one --file");
      for (const std::string& file : fetch_files) {
        if (!fs::exists(dir / file)) {
          std::string url = fetch_url;
          if (url.empty()) {
            const auto it = known_urls().find(file);
            if (it == known_urls().end()) throw ConfigError("no known source for " + file + "; pass --url");
            url = it->second;
          }
          out << "downloading " << url << '\n';
          download(url, dir / file);
        }
        check_manifest(dir, file, out);
      }
      return kOk;
    }
  } catch (const ConfigError& e) {
    return classify(err, "config", e.what(), kConfigError);
  } catch (const CheckpointError& e) {
    return classify(err, "config", e.what(), kConfigError);
  } catch (const DataError& e) {
    return classify(err, "data", e.what(), kDataError);
  } catch (const NumericError& e) {
    return classify(err, "numeric", e.what(), kNumericError);
  } catch (const std::exception& e) {
    return classify(err, "config", e.what(), kConfigError);
  }
  return kConfigError;
}

}  // namespace timepro::cli
