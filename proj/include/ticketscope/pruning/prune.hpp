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
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "ticketscope/core/rng.hpp"
#include "ticketscope/pruning/mask.hpp"

namespace ts {

struct PruneResult {
  Mask mask;
  std::size_t pruned = 0;
  /// Set when round(rate * r) == 0: the mask is returned unchanged.
  bool no_op = false;
};

/// k = round-half-up(rate * r).
inline std::size_t prune_count(double rate, std::size_t remaining) {
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(remaining) + 0.5));
}

/// Remaining count after one pruning iteration at `rate`.
inline std::size_t remaining_after(std::size_t remaining, double rate) {
  return remaining - prune_count(rate, remaining);
}

namespace detail {

template <class T>
PruneResult magnitude_prune(const ParamRegistry<T>& registry, const Mask& current, double rate,
                            std::optional<int> depth_limit) {
  if (!(rate > 0.0 && rate < 1.0)) throw ValueError("pruning rate must be in (0, 1)");
  current.check_against(registry);

  struct Candidate {
    T magnitude;
    int layer_id;
    std::uint32_t entry;
    std::uint32_t index;
  };
  std::vector<Candidate> pool;
  for (std::uint32_t e = 0; e < current.entries.size(); ++e) {
    const auto& me = current.entries[e];
    if (depth_limit && me.layer_id > *depth_limit) continue;
    const auto& w = registry.at(me.name).value;
    for (std::uint32_t j = 0; j < me.bits.size(); ++j) {
      if (me.bits[j]) pool.push_back({std::abs(w[j]), me.layer_id, e, j});
    }
  }
  const std::size_t r = pool.size();
  if (r == 0) throw ValueError("no unmasked weights left to prune");

  PruneResult out{current, 0, false};
  const std::size_t k = prune_count(rate, r);
  if (k == 0) {
    out.no_op = true;
    return out;
  }
  if (k >= r) throw ValueError("pruning " + std::to_string(k) + " of " + std::to_string(r) + " weights would empty the network");

  auto less = [](const Candidate& a, const Candidate& b) {
    if (a.magnitude != b.magnitude) return a.magnitude < b.magnitude;
    if (a.layer_id != b.layer_id) return a.layer_id < b.layer_id;
    if (a.entry != b.entry) return a.entry < b.entry;
    return a.index < b.index;
  };
  std::nth_element(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k - 1), pool.end(), less);
  const Candidate pivot = pool[k - 1];
  for (const auto& c : pool) {
    if (!less(pivot, c)) out.mask.entries[c.entry].bits[c.index] = 0;
  }
  out.pruned = k;
  return out;
}

}  // namespace detail

/// Masks the k = round(rate * r) smallest-magnitude active weights over all
/// prunable tensors jointly. Ties go to the lower (layer_id, flat index).
/// `current` is not modified.
template <class T>
PruneResult global_magnitude_prune(const ParamRegistry<T>& registry, const Mask& current, double rate) {
  return detail::magnitude_prune(registry, current, rate, std::nullopt);
}

template <class T>
PruneResult global_magnitude_prune(const Subnetwork<T>& sub, double rate) {
  return global_magnitude_prune(sub.model.registry(), sub.mask, rate);
}

/// Like global_magnitude_prune, but only tensors with layer_id <= depth_limit
/// are candidates and k is computed from the active count of that pool.
template <class T>
PruneResult layerwise_prune(const ParamRegistry<T>& registry, const Mask& current, double rate, int depth_limit) {
  if (depth_limit < 1) throw ValueError("depth_limit must be >= 1");
  return detail::magnitude_prune(registry, current, rate, depth_limit);
}

template <class T>
PruneResult layerwise_prune(const Subnetwork<T>& sub, double rate, int depth_limit) {
  return layerwise_prune(sub.model.registry(), sub.mask, rate, depth_limit);
}

namespace detail {

inline std::size_t keep_count(double fraction, std::size_t d) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValueError("remaining fraction must be in (0, 1]");
  const auto keep = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(d) + 0.5));
  if (keep == 0) throw ValueError("remaining fraction leaves no active weight");
  return std::min(keep, d);
}

// Maps a flat index over all mask entries to (entry, offset).
inline void set_flat(Mask& m, std::size_t flat, std::uint8_t v) {
  for (auto& e : m.entries) {
    if (flat < e.bits.size()) {
      e.bits[flat] = v;
      return;
    }
    flat -= e.bits.size();
  }
}

}  // namespace detail

/// Exactly round(fraction * d) active entries, positions drawn uniformly
/// without replacement over all prunable entries.
template <class T>
Mask random_mask(const ParamRegistry<T>& registry, double fraction, std::uint64_t seed) {
  Mask m = Mask::full(registry);
  const std::size_t d = m.total();
  const std::size_t keep = detail::keep_count(fraction, d);
  for (auto& e : m.entries) std::fill(e.bits.begin(), e.bits.end(), std::uint8_t{0});
  Rng rng(seed);
  for (auto j : rng.sample_without_replacement(d, keep)) detail::set_flat(m, j, 1);
  return m;
}

/// Random baseline that first removes the naturally-zero weights
/// (|w| < epsilon), then random non-zero ones, until round(fraction * d)
/// entries remain. If fewer weights must go than are zero, a random subset
/// of the zeros is masked instead.
template <class T>
Mask sparsity_corrected_random_mask(const ParamRegistry<T>& registry, double fraction, double epsilon,
                                    std::uint64_t seed) {
  Mask m = Mask::full(registry);
  const std::size_t d = m.total();
  const std::size_t keep = detail::keep_count(fraction, d);
  const std::size_t prune = d - keep;
  std::vector<std::size_t> zeros, nonzeros;
  std::size_t flat = 0;
  for (const auto& e : m.entries) {
    const auto& w = registry.at(e.name).value;
    for (std::size_t j = 0; j < e.bits.size(); ++j, ++flat) {
      (std::abs(static_cast<double>(w[j])) < epsilon ? zeros : nonzeros).push_back(flat);
    }
  }
  Rng rng(seed);
  if (prune <= zeros.size()) {
    for (auto j : rng.split("zeros").sample_without_replacement(zeros.size(), prune)) detail::set_flat(m, zeros[j], 0);
  } else {
    for (auto z : zeros) detail::set_flat(m, z, 0);
    for (auto j : rng.split("nonzeros").sample_without_replacement(nonzeros.size(), prune - zeros.size())) {
      detail::set_flat(m, nonzeros[j], 0);
    }
  }
  return m;
}

}  // namespace ts
