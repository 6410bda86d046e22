// Copyright 2026 The ticketscope Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include <unistd.h>

#include "ticketscope/autograd/graph.hpp"
#include "ticketscope/autograd/ops.hpp"
#include "ticketscope/core/rng.hpp"
#include "ticketscope/core/tensor.hpp"
#include "ticketscope/pruning/mask.hpp"

namespace ts::testing {

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Reduces a node to a scalar through a fixed random projection so that every
/// output element contributes to the checked gradient.
inline NodeId project(Graph<double>& g, NodeId node, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor<double> r = random_tensor(g.value(node).shape(), rng);
  return ops::sum(g, ops::mul(g, node, g.constant(r)));
}

using GraphBuilder = std::function<NodeId(Graph<double>&, const std::vector<NodeId>&)>;

/// ||analytic - numeric|| / max(||analytic||, ||numeric||) for each input,
/// numeric gradients by central differences.
inline std::vector<double> gradient_errors(const std::vector<Tensor<double>>& inputs, const GraphBuilder& build,
                                           double h = 1e-6) {
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Graph<double> g;
    std::vector<NodeId> ids;
    for (const auto& x : xs) ids.push_back(g.leaf(x));
    return g.value(build(g, ids))[0];
  };

  Graph<double> g;
  std::vector<NodeId> ids;
  for (const auto& x : inputs) ids.push_back(g.leaf(x));
  g.backward(build(g, ids));

  std::vector<double> errors;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double> analytic = g.has_grad(ids[k]) ? g.grad(ids[k]) : Tensor<double>(inputs[k].shape());
    double diff = 0, na = 0, nn = 0;
    auto xs = inputs;
    for (std::size_t j = 0; j < inputs[k].size(); ++j) {
      const double x0 = xs[k][j];
      xs[k][j] = x0 + h;
      const double fp = eval(xs);
      xs[k][j] = x0 - h;
      const double fm = eval(xs);
      xs[k][j] = x0;
      const double numeric = (fp - fm) / (2 * h);
      diff += (analytic[j] - numeric) * (analytic[j] - numeric);
      na += analytic[j] * analytic[j];
      nn += numeric * numeric;
    }
    const double denom = std::max(std::sqrt(std::max(na, nn)), 1e-12);
    errors.push_back(std::sqrt(diff) / denom);
  }
  return errors;
}

inline double max_error(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

/// Registry of `layers` prunable tensors plus one protected tensor, with
/// weights quantized to `levels` magnitudes so that ties are common.
inline ParamRegistry<float> random_registry(Rng& rng, std::size_t max_entries, int levels) {
  ParamRegistry<float> reg;
  const std::size_t layers = 1 + rng.below(5);
  std::size_t budget = max_entries;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t n = 1 + rng.below(std::max<std::size_t>(budget / (layers - l), 1));
    budget -= std::min(budget, n);
    Tensor<float> w({n});
    for (std::size_t j = 0; j < n; ++j) {
      const double mag = levels > 0 ? static_cast<double>(1 + rng.below(static_cast<std::uint64_t>(levels))) / levels
                                    : rng.uniform();
      w[j] = static_cast<float>(rng.bernoulli(0.5) ? -mag : mag);
    }
    const int id = static_cast<int>(l + 1);
    reg.add({id, "layer" + std::to_string(id) + ".weight", ParamKind::kConv, true, std::move(w), {}});
    reg.add({id, "layer" + std::to_string(id) + ".gamma", ParamKind::kNormAffine, false, Tensor<float>({1}, 1.0f), {}});
  }
  return reg;
}

/// Brute force: sort every active entry by (|w|, layer_id, entry, index) and
/// take the first k. Returns the flat positions (over mask entries) chosen.
inline std::vector<std::size_t> brute_force_prune_set(const ParamRegistry<float>& reg, const Mask& mask,
                                                      std::size_t k) {
  struct Key {
    float mag;
    int layer;
    std::size_t entry, index, flat;
  };
  std::vector<Key> keys;
  std::size_t flat = 0;
  for (std::size_t e = 0; e < mask.entries.size(); ++e) {
    const auto& w = reg.at(mask.entries[e].name).value;
    for (std::size_t j = 0; j < w.size(); ++j, ++flat) {
      if (mask.entries[e].bits[j]) keys.push_back({std::abs(w[j]), mask.entries[e].layer_id, e, j, flat});
    }
  }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    return std::tie(a.mag, a.layer, a.entry, a.index) < std::tie(b.mag, b.layer, b.entry, b.index);
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k && i < keys.size(); ++i) out.push_back(keys[i].flat);
  std::sort(out.begin(), out.end());
  return out;
}

/// Flat positions that are active in `before` and inactive in `after`.
inline std::vector<std::size_t> newly_masked(const Mask& before, const Mask& after) {
  std::vector<std::size_t> out;
  std::size_t flat = 0;
  for (std::size_t e = 0; e < before.entries.size(); ++e) {
    for (std::size_t j = 0; j < before.entries[e].bits.size(); ++j, ++flat) {
      if (before.entries[e].bits[j] && !after.entries[e].bits[j]) out.push_back(flat);
    }
  }
  return out;
}

/// Bit-level equality of every parameter and buffer.
template <class T>
bool identical_state(const Model<T>& a, const Model<T>& b) {
  const auto& ra = a.registry().entries();
  const auto& rb = b.registry().entries();
  if (ra.size() != rb.size() || a.buffers().size() != b.buffers().size()) return false;
  auto same = [](const Tensor<T>& x, const Tensor<T>& y) {
    return x.shape() == y.shape() && std::memcmp(x.data(), y.data(), x.size() * sizeof(T)) == 0;
  };
  for (std::size_t i = 0; i < ra.size(); ++i) {
    if (ra[i].name != rb[i].name || !same(ra[i].value, rb[i].value)) return false;
  }
  for (std::size_t i = 0; i < a.buffers().size(); ++i) {
    if (!same(a.buffers()[i].value, b.buffers()[i].value)) return false;
  }
  return true;
}

/// Number of masked entries whose weight is not exactly +0.
template <class T>
std::size_t masked_nonzero(const Model<T>& model, const Mask& mask) {
  std::size_t bad = 0;
  for (const auto& e : mask.entries) {
    const auto& w = model.registry().at(e.name).value;
    for (std::size_t j = 0; j < e.bits.size(); ++j) {
      if (!e.bits[j] && (w[j] != T(0) || std::signbit(w[j]))) ++bad;
    }
  }
  return bad;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("ticketscope_" + tag + "_" + std::to_string(Rng::hash(tag) ^ static_cast<std::uint64_t>(::getpid())));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace ts::testing
