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
#include <string>
#include <utility>
#include <vector>

#include "ticketscope/core/rng.hpp"
#include "ticketscope/data/dataset.hpp"

namespace ts {

enum class SubsetMode { kPerClass, kByClass };

inline SubsetMode parse_subset_mode(const std::string& s) {
  if (s == "per_class") return SubsetMode::kPerClass;
  if (s == "by_class") return SubsetMode::kByClass;
  throw ValueError("unknown subset mode '" + s + "' (expected per_class or by_class)");
}

struct SubsetSpec {
  double fraction = 0.1;
  SubsetMode mode = SubsetMode::kPerClass;
  std::uint64_t seed = 0;
};

struct SubsetSplit {
  Dataset labeled;
  Dataset unlabeled;  // labels are kHiddenLabel
  std::vector<std::size_t> labeled_index;
  std::vector<std::size_t> unlabeled_index;
};

/// Splits `ds` into a labeled part and an unlabeled part.
///
/// per_class keeps floor(fraction * n_c) images (at least 1) of every class c;
/// by_class keeps every image of floor(fraction * class_count) classes (at
/// least 1). Both parts keep the original dataset order.
inline SubsetSplit sample_labeled_subset(const Dataset& ds, const SubsetSpec& spec) {
  if (!(spec.fraction > 0.0 && spec.fraction <= 1.0)) throw ValueError("subset fraction must be in (0, 1]");
  if (ds.empty()) throw ValueError("cannot sample a labeled subset of an empty dataset");
  Rng rng(spec.seed);
  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] < 0) throw ValueError("cannot subset a dataset whose labels are hidden");
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }

  std::vector<char> keep(ds.size(), 0);
  if (spec.mode == SubsetMode::kPerClass) {
    for (std::size_t c = 0; c < ds.class_count; ++c) {
      const auto& members = by_class[c];
      if (members.empty()) continue;
      const auto k = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(spec.fraction * static_cast<double>(members.size()) + 1e-9)));
      Rng crng = rng.split(c);
      for (auto j : crng.sample_without_replacement(members.size(), k)) keep[members[j]] = 1;
    }
  } else {
    const auto k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(spec.fraction * static_cast<double>(ds.class_count) + 1e-9)));
    for (auto c : rng.sample_without_replacement(ds.class_count, k)) {
      for (auto i : by_class[c]) keep[i] = 1;
    }
  }

  SubsetSplit out;
  for (std::size_t i = 0; i < ds.size(); ++i) (keep[i] ? out.labeled_index : out.unlabeled_index).push_back(i);
  if (out.labeled_index.empty()) throw ValueError("labeled subset is empty");
  out.labeled = ds.select(out.labeled_index);
  out.unlabeled = ds.select(out.unlabeled_index);
  std::fill(out.unlabeled.labels.begin(), out.unlabeled.labels.end(), kHiddenLabel);
  return out;
}

}  // namespace ts
