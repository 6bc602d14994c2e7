// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "timepro/ops.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace timepro {

/// Seeded generator with platform-independent uniform/normal draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Box-Muller; one value per call.
  double normal();
  std::uint64_t next() { return engine_(); }
  /// Fisher-Yates with this generator, so orderings are reproducible everywhere.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(engine_() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

  Array uniform_array(Index n, double lo, double hi);
  Array normal_array(Index n, double stddev);

 private:
  std::mt19937_64 engine_;
};

/// Ordered, named collection of trainable leaves.
class ParamStore {
 public:
  Tensor add(std::string name, Tensor value);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  Index total_elements() const;
  void zero_grad();

  /// Values only, in entry order.
  std::vector<Array> snapshot() const;
  void restore(const std::vector<Array>& values);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// y = x W (+ b) over the last axis; weight is [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;  // undefined when disabled

  Tensor operator()(const Tensor& x) const;
  Index in_features() const { return weight.dim(0); }
  Index out_features() const { return weight.dim(1); }
};

/// Uniform(-1/sqrt(in), 1/sqrt(in)) weights and bias.
Linear make_linear(ParamStore& store, const std::string& name, Index in, Index out, bool bias,
                   Rng& rng);

}  // namespace timepro
