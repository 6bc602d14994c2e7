// SPDX-License-Identifier: Apache-2.0
#include "timepro/params.hpp"

#include <cmath>
#include <numbers>

namespace timepro {

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Array Rng::uniform_array(Index n, double lo, double hi) {
  Array a(n);
  for (Index i = 0; i < n; ++i) a(i) = uniform(lo, hi);
  return a;
}

Array Rng::normal_array(Index n, double stddev) {
  Array a(n);
  for (Index i = 0; i < n; ++i) a(i) = stddev * normal();
  return a;
}

Tensor ParamStore::add(std::string name, Tensor value) {
  if (contains(name)) throw Error("duplicate parameter name " + name);
  value.set_requires_grad(true);
  entries_.emplace_back(std::move(name), value);
  return value;
}

Tensor ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw Error("unknown parameter " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& entry : entries_) {
    if (entry.first == name) return true;
  }
  return false;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& entry : entries_) out.push_back(entry.second);
  return out;
}

Index ParamStore::total_elements() const {
  Index n = 0;
  for (const auto& entry : entries_) n += entry.second.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& entry : entries_) entry.second.zero_grad();
}

std::vector<Array> ParamStore::snapshot() const {
  std::vector<Array> out;
  out.reserve(entries_.size());
  for (const auto& entry : entries_) out.push_back(entry.second.data());
  return out;
}

void ParamStore::restore(const std::vector<Array>& values) {
  if (values.size() != entries_.size()) throw Error("snapshot does not match parameter list");
  for (std::size_t i = 0; i < values.size(); ++i) {
    Tensor t = entries_[i].second;
    if (t.numel() != values[i].size()) throw ShapeError("snapshot entry size mismatch");
    t.mutable_data() = values[i];
  }
}

Tensor Linear::operator()(const Tensor& x) const {
  const Index in = in_features();
  if (x.rank() == 0 || x.dim(-1) != in) {
    throw ShapeError("linear: expected last axis " + std::to_string(in) + ", got " +
                     to_string(x.shape()));
  }
  Tensor y = matmul(reshape(x, {x.numel() / in, in}), weight);
  if (bias.defined()) y = add_bcast(y, bias);
  Shape shape = x.shape();
  shape.back() = out_features();
  return reshape(y, std::move(shape));
}

Linear make_linear(ParamStore& store, const std::string& name, Index in, Index out, bool bias,
                   Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = store.add(name + ".weight", Tensor::from({in, out}, rng.uniform_array(in * out, -bound, bound)));
  if (bias) l.bias = store.add(name + ".bias", Tensor::from({out}, rng.uniform_array(out, -bound, bound)));
  return l;
}

}  // namespace timepro
