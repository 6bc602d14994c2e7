// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include "timepro/grad_check.hpp"
#include "timepro/model.hpp"
#include "timepro/ssm.hpp"

#include <algorithm>

namespace timepro::cli {

namespace {

constexpr double kModuleTol = 1e-4;
constexpr double kEndToEndTol = 1e-3;

Tensor uniform(Rng& rng, Shape shape, double lo, double hi) {
  const Index n = numel(shape);
  return Tensor::from(std::move(shape), rng.uniform_array(n, lo, hi), true);
}

// Values kept away from integers so clamped or piecewise-linear kinks are not probed.
Tensor fractional(Rng& rng, Shape shape, double magnitude) {
  const Index n = numel(shape);
  Array v(n);
  for (Index i = 0; i < n; ++i) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    v(i) = sign * (std::floor(rng.uniform(0.0, magnitude)) + rng.uniform(0.2, 0.8));
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

/// Weighted sum with fixed random weights, so every output entry matters.
Tensor probe(const Tensor& out, Rng& rng) {
  const Tensor w = Tensor::from(out.shape(), rng.uniform_array(out.numel(), -1.0, 1.0));
  return sum(mul(out, w));
}

bool has(const std::string& name, const char* part) { return name.find(part) != std::string::npos; }

// Moves the scan and time-tune parameters off their initial values: zero offset
// layers, one-hot fusion and a tiny step size all leave gradients too small for
// central differences to resolve. Offsets are centred on +0.5 so sampling
// coordinates stay clear of the interpolation kinks at integers.
void randomize_tune(const ParamStore& store, Rng& rng) {
  for (const auto& [name, param] : store.entries()) {
    Tensor t = param;
    if (has(name, "offset_conv2.weight")) {
      t.mutable_data() = rng.uniform_array(t.numel(), -0.1, 0.1);
    } else if (has(name, "offset_conv2.bias")) {
      t.mutable_data() = rng.uniform_array(t.numel(), 0.45, 0.55);
    } else if (has(name, "tune.fuse.weight")) {
      t.mutable_data() = rng.uniform_array(t.numel(), -0.4, 0.4);
    } else if (has(name, "a_log")) {
      t.mutable_data() = rng.uniform_array(t.numel(), -1.0, 0.5);
    } else if (has(name, "delta_proj.bias")) {
      t.mutable_data() = rng.uniform_array(t.numel(), -1.5, 0.5);
    } else if (has(name, "delta_proj.weight") || has(name, "b_proj") || has(name, "c_proj")) {
      t.mutable_data() = rng.uniform_array(t.numel(), -0.8, 0.8);
    }
  }
}

struct Case {
  std::string name;
  double tolerance;
  // Builds a fresh instance for a seed; returns the loss closure and its inputs.
  std::function<void(Rng&, std::function<Tensor()>&, std::vector<Tensor>&)> build;
};

HyperMambaOptions tiny_hyper(ScanVariant v = ScanVariant::hyper) {
  HyperMambaOptions opt;
  opt.patches = 5;
  opt.embed_dim = 8;
  opt.n_samples = 3;
  opt.variant = v;
  return opt;
}

ModelConfig tiny_model(ScanVariant v) {
  ModelConfig cfg;
  cfg.lookback = 16;
  cfg.horizon = 4;
  cfg.n_vars = 3;
  cfg.patch_len = 4;
  cfg.stride = 4;
  cfg.embed_dim = 8;
  cfg.n_layers = 2;
  cfg.n_samples = 3;
  cfg.scan_variant = v;
  return cfg;
}

constexpr ScanVariant kVariants[] = {ScanVariant::hyper,        ScanVariant::var_only,
                                     ScanVariant::time_only,    ScanVariant::time_then_var,
                                     ScanVariant::non_adaptive, ScanVariant::none};

std::vector<Case> make_cases() {
  std::vector<Case> cases;
  cases.push_back({"matmul", kModuleTol, [](Rng& rng, auto& loss, auto& in) {
    in = {uniform(rng, {5, 4}, -1, 1), uniform(rng, {4, 3}, -1, 1)};
    const Tensor w = Tensor::from({5, 3}, rng.uniform_array(15, -1, 1));
    loss = [in, w] { return sum(mul(matmul(in[0], in[1]), w)); };
  }});
  cases.push_back({"elementwise", kModuleTol, [](Rng& rng, auto& loss, auto& in) {
    in = {uniform(rng, {3, 4}, -3, 3)};
    const Tensor w1 = Tensor::from({3, 4}, rng.uniform_array(12, -1, 1));
    const Tensor w2 = Tensor::from({3, 4}, rng.uniform_array(12, -1, 1));
    const Tensor w3 = Tensor::from({3, 4}, rng.uniform_array(12, -1, 1));
    loss = [in, w1, w2, w3] {
      const Tensor& x = in[0];
      return add(add(sum(mul(silu(x), w1)), sum(mul(softplus(x), w2))),
                 add(sum(mul(sigmoid(x), w3)), sum(mul(exp(scale(x, 0.3)), square(w1)))));
    };
  }});
  cases.push_back({"expm1_ratio", kModuleTol, [](Rng& rng, auto& loss, auto& in) {
    Array v = rng.uniform_array(8, -2.0, 2.0);
    v(0) = 3e-4;
    v(1) = -2e-3;
    in = {Tensor::from({8}, std::move(v), true)};
    const Tensor w = Tensor::from({8}, rng.uniform_array(8, -1, 1));
    loss = [in, w] { return sum(mul(expm1_ratio(in[0]), w)); };
  }});
  cases.push_back({"conv1d", kModuleTol, [](Rng& rng, auto& loss, auto& in) {
    in = {uniform(rng, {2, 3, 10}, -1, 1), uniform(rng, {4, 3, 3}, -1, 1), uniform(rng, {4}, -1, 1)};
    Rng wr(rng.next());
    const Tensor w = Tensor::from({2, 4, 10}, wr.uniform_array(80, -1, 1));
    loss = [in, w] { return sum(mul(conv1d(in[0], in[1], in[2], 1), w)); };
  }});
  cases.push_back({"layer_norm", kModuleTol, [](Rng& rng, auto& loss, auto& in) {
    in = {uniform(rng, {3, 5, 6}, -2, 2), uniform(rng, {6}, 0.5, 1.5), uniform(rng, {6}, -0.5, 0.5)};
    const Tensor w = Tensor::from({3, 5, 6}, rng.uniform_array(90, -1, 1));
    loss = [in, w] { return sum(mul(layer_norm(in[0], in[1], in[2]), w)); };
  }});
  cases.push_back({"linear_recurrence", kModuleTol, [](Rng& rng, auto& loss, auto& in) {
    in = {uniform(rng, {2, 7, 3}, 0.1, 0.95), uniform(rng, {2, 7, 3}, -1, 1)};
    const Tensor w = Tensor::from({2, 7, 3}, rng.uniform_array(42, -1, 1));
    loss = [in, w] {
      return add(sum(mul(linear_recurrence(in[0], in[1]), w)),
                 sum(mul(linear_recurrence(in[0], in[1], true), square(w))));
    };
  }});
  cases.push_back({"linear_interp1d", kModuleTol, [](Rng& rng, auto& loss, auto& in) {
    const double c = std::floor(rng.uniform(0.0, 5.0)) + rng.uniform(0.2, 0.8);
    in = {uniform(rng, {6}, -1, 1), Tensor::scalar(c, true)};
    loss = [in] { return square(linear_interp1d(in[0], in[1])); };
  }});
  cases.push_back({"deformable_sample", kModuleTol, [](Rng& rng, auto& loss, auto& in) {
    in = {uniform(rng, {2, 6, 3}, -1, 1), fractional(rng, {2, 6, 3}, 2.0)};
    const bool residual = rng.uniform() < 0.5;
    Rng wr(rng.next());
    const Tensor w = Tensor::from({2, 6, 3, 3}, wr.uniform_array(108, -1, 1));
    loss = [in, w, residual] {
      const std::vector<double> base = base_offsets(3);
      return sum(mul(deformable_sample(in[0], in[1], base, residual), w));
    };
  }});
  cases.push_back({"ssm.selective_scan", kModuleTol, [](Rng& rng, auto& loss, auto& in) {
    in = {uniform(rng, {2, 6, 4}, -1, 1),      // x
          uniform(rng, {4}, -2.0, -0.2),        // A
          uniform(rng, {2, 6, 4}, -1, 1),       // B
          uniform(rng, {2, 6, 4}, -1, 1),       // C
          uniform(rng, {2, 6, 4}, 0.05, 0.8),   // delta
          uniform(rng, {4}, -1, 1)};            // D
    const bool reverse = rng.uniform() < 0.5;
    Rng wr(rng.next());
    loss = [in, reverse, seed = wr.next()] {
      Rng pr(seed);
      const ssm::ScanOutput s = ssm::selective_scan(in[0], in[1], in[2], in[3], in[4], in[5], reverse);
      const Tensor on_y = probe(s.y, pr);
      return add(on_y, probe(s.states, pr));
    };
  }});
  cases.push_back({"hyperscan.time_tune", kModuleTol, [](Rng& rng, auto& loss, auto& in) {
    const HyperMambaOptions opt = tiny_hyper();
    auto store = std::make_shared<ParamStore>();
    const HyperMambaWeights hw = make_hypermamba_weights(*store, "hm", opt, rng);
    randomize_tune(*store, rng);
    const TimeTuneWeights& tw = hw.forward.tune;
    in = {uniform(rng, {3, 5, 4}, -1, 1), tw.offset_conv1_w, tw.offset_conv1_b, tw.offset_conv2_w,
          tw.offset_conv2_b, tw.fuse_w, tw.fuse_b};
    loss = [in, tw, store, seed = rng.next()] {
      Rng pr(seed);
      const Tensor offsets = compute_offsets(in[0], tw, 3);
      return probe(time_tune(in[0], offsets, tw), pr);
    };
  }});
  cases.push_back({"hyperscan.hypermamba_forward", kModuleTol, [](Rng& rng, auto& loss, auto& in) {
    const ScanVariant v = kVariants[rng.next() % 5];
    const HyperMambaOptions opt = tiny_hyper(v);
    auto store = std::make_shared<ParamStore>();
    auto hw = std::make_shared<HyperMambaWeights>(make_hypermamba_weights(*store, "hm", opt, rng));
    randomize_tune(*store, rng);
    in = store->tensors();
    in.insert(in.begin(), uniform(rng, {1, 3, 5, 8}, -1, 1));
    loss = [in, hw, store, opt, seed = rng.next()] {
      Rng pr(seed);
      return probe(hypermamba_forward(in[0], *hw, opt), pr);
    };
  }});
  cases.push_back({"model.problock", kModuleTol, [](Rng& rng, auto& loss, auto& in) {
    const ScanVariant v = kVariants[rng.next() % 6];
    auto model = std::make_shared<TimeProModel>(tiny_model(v), rng.next());
    randomize_tune(model->params(), rng);
    in = model->params().tensors();
    in.insert(in.begin(), uniform(rng, {1, 3, 5, 8}, -1, 1));
    loss = [in, model, seed = rng.next()] {
      Rng pr(seed);
      const HyperMambaOptions opt = model->config().hypermamba_options();
      return probe(problock_forward(in[0], model->blocks().front(), opt), pr);
    };
  }});
  cases.push_back({"model.end_to_end", kEndToEndTol, [](Rng& rng, auto& loss, auto& in) {
    const ScanVariant v = kVariants[rng.next() % 6];
    auto model = std::make_shared<TimeProModel>(tiny_model(v), rng.next());
    randomize_tune(model->params(), rng);
    in = model->params().tensors();
    const Tensor x = Tensor::from({2, 3, 16}, rng.normal_array(96, 1.0));
    const Tensor y = Tensor::from({2, 3, 4}, rng.normal_array(24, 1.0));
    loss = [model, x, y] { return mse_loss(model->forward(x), y); };
  }});
  return cases;
}

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite(Index instances, std::uint64_t seed, const GradCheckOptions& options) {
  std::vector<GradSuiteEntry> results;
  for (const Case& c : make_cases()) {
    GradSuiteEntry e;
    e.name = c.name;
    e.tolerance = c.tolerance;
    for (Index i = 0; i < instances; ++i) {
      Rng rng(seed * 1000003ULL + static_cast<std::uint64_t>(i) * 7919ULL + results.size());
      std::function<Tensor()> loss;
      std::vector<Tensor> inputs;
      c.build(rng, loss, inputs);
      const GradCheckReport rep = grad_check(loss, inputs, options);
      if (rep.max_rel_error > e.max_rel_error || i == 0) {
        e.max_rel_error = rep.max_rel_error;
        e.worst_instance = i;
        e.worst_input = rep.worst_input;
        e.worst_entry = rep.worst_entry;
        e.worst_analytic = rep.worst_analytic;
        e.worst_numeric = rep.worst_numeric;
      }
      e.entries += rep.checked;
      ++e.instances;
    }
    results.push_back(e);
  }
  return results;
}

}  // namespace timepro::cli
