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

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "ticketscope/model/registry.hpp"

namespace ts {

/// Default "numerically zero" threshold: smallest positive normal float.
inline constexpr double kDefaultSparsityEpsilon = std::numeric_limits<float>::min();

struct SparsityReport {
  struct Layer {
    int layer_id = 0;
    std::string name;
    std::size_t count = 0;
    std::size_t zeros = 0;
    double fraction = 0.0;
  };

  double epsilon = kDefaultSparsityEpsilon;
  std::size_t total = 0;
  std::size_t zeros = 0;
  double global_fraction = 0.0;
  std::vector<Layer> per_layer;
  /// Decade bins: bin 0 is [0, 10^lo), bin i is [10^(lo+i-1), 10^(lo+i)),
  /// the last bin is [10^hi, inf).
  std::vector<double> bin_edges;
  std::vector<std::size_t> histogram;
};

inline constexpr int kHistogramLowDecade = -45;
inline constexpr int kHistogramHighDecade = 2;

/// Fraction of prunable weights with |w| < epsilon, per layer and overall,
/// plus a log-magnitude histogram of all prunable weights.
template <class T>
SparsityReport natural_sparsity(const ParamRegistry<T>& registry, double epsilon = kDefaultSparsityEpsilon) {
  SparsityReport rep;
  rep.epsilon = epsilon;
  for (int d = kHistogramLowDecade; d <= kHistogramHighDecade; ++d) rep.bin_edges.push_back(std::pow(10.0, d));
  rep.histogram.assign(rep.bin_edges.size() + 1, 0);
  for (const auto& p : registry.entries()) {
    if (!p.prunable) continue;
    SparsityReport::Layer layer{p.layer_id, p.name, p.value.size(), 0, 0.0};
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double a = std::abs(static_cast<double>(p.value[j]));
      if (a < epsilon) ++layer.zeros;
      std::size_t bin = 0;
      if (a >= rep.bin_edges.front()) {
        const int dec = static_cast<int>(std::floor(std::log10(a)));
        bin = static_cast<std::size_t>(std::clamp(dec, kHistogramLowDecade, kHistogramHighDecade) - kHistogramLowDecade) + 1;
        // log10 rounding near exact powers of ten
        if (bin < rep.histogram.size() - 1 && a >= rep.bin_edges[bin]) ++bin;
        if (bin > 0 && a < rep.bin_edges[bin - 1]) --bin;
      }
      ++rep.histogram[bin];
    }
    layer.fraction = layer.count ? static_cast<double>(layer.zeros) / static_cast<double>(layer.count) : 0.0;
    rep.total += layer.count;
    rep.zeros += layer.zeros;
    rep.per_layer.push_back(layer);
  }
  rep.global_fraction = rep.total ? static_cast<double>(rep.zeros) / static_cast<double>(rep.total) : 0.0;
  return rep;
}

inline nlohmann::json to_json(const SparsityReport& rep) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : rep.per_layer) {
    layers.push_back({{"layer_id", l.layer_id}, {"name", l.name}, {"count", l.count}, {"zeros", l.zeros},
                      {"fraction", l.fraction}});
  }
  return {{"epsilon", rep.epsilon},
          {"total", rep.total},
          {"zeros", rep.zeros},
          {"global_fraction", rep.global_fraction},
          {"per_layer", layers},
          {"histogram", {{"bins", rep.bin_edges}, {"counts", rep.histogram}}}};
}

}  // namespace ts
