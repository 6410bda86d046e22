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

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ticketscope/data/dataset.hpp"
#include "ticketscope/model/model.hpp"
#include "ticketscope/tasks/objectives.hpp"

namespace ts {

struct Metrics {
  double top1 = 0.0;
  std::vector<double> per_class;  // accuracy per true class; NaN-free, classes without samples get 0
  std::size_t count = 0;
};

/// Index of the largest entry of a row; ties go to the lowest index.
template <class T>
std::size_t argmax_row(const T* row, std::size_t c) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

template <class T>
std::vector<int> predictions(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("predictions: logits must be [N,C]");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<int>(argmax_row(logits.data() + i * c, c));
  return out;
}

/// Top-1 and per-class accuracy of predictions against labels in [0, classes).
inline Metrics score(std::span<const int> predicted, std::span<const int> labels, std::size_t classes) {
  if (predicted.size() != labels.size()) throw ShapeError("score: prediction and label counts differ");
  Metrics m;
  m.count = labels.size();
  std::vector<std::size_t> hit(classes, 0), seen(classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ValueError("score: label " + std::to_string(labels[i]) + " out of range");
    }
    const auto y = static_cast<std::size_t>(labels[i]);
    ++seen[y];
    if (predicted[i] == labels[i]) {
      ++hit[y];
      ++correct;
    }
  }
  m.top1 = m.count ? static_cast<double>(correct) / static_cast<double>(m.count) : 0.0;
  m.per_class.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    m.per_class[c] = seen[c] ? static_cast<double>(hit[c]) / static_cast<double>(seen[c]) : 0.0;
  }
  return m;
}

template <class T>
Metrics accuracy_from_logits(const Tensor<T>& logits, std::span<const int> labels) {
  const auto p = predictions(logits);
  return score(p, labels, logits.dim(1));
}

/// Eval-mode accuracy of head `head` on a labeled dataset. Pure: no
/// parameter or statistic changes.
template <class T>
Metrics evaluate(const Model<T>& model, const Dataset& ds, const std::string& head = kLabelHead,
                 std::size_t batch = 250) {
  if (ds.empty()) throw ValueError("evaluate: empty dataset");
  const std::size_t h = model.head_index(head);
  std::vector<int> pred;
  pred.reserve(ds.size());
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < ds.size(); b += batch) {
    idx.resize(std::min(batch, ds.size() - b));
    std::iota(idx.begin(), idx.end(), b);
    const auto p = predictions(model.predict(ds.batch<T>(idx), h));
    pred.insert(pred.end(), p.begin(), p.end());
  }
  return score(pred, ds.labels, model.head_width(h));
}

/// Accuracy of the rotation head over all four quarter turns of every image.
template <class T>
Metrics rotation_accuracy(const Model<T>& model, const Dataset& ds, std::size_t batch = 100) {
  if (ds.empty()) throw ValueError("rotation_accuracy: empty dataset");
  const std::size_t h = model.head_index(kRotationHead);
  std::vector<int> pred, truth;
  std::vector<std::size_t> idx;
  Rng unused(0);
  for (std::size_t b = 0; b < ds.size(); b += batch) {
    idx.resize(std::min(batch, ds.size() - b));
    std::iota(idx.begin(), idx.end(), b);
    auto [x, y] = rotnet_batch(ds.batch<T>(idx), RotnetMode::kAllFour, unused);
    const auto p = predictions(model.predict(x, h));
    pred.insert(pred.end(), p.begin(), p.end());
    truth.insert(truth.end(), y.begin(), y.end());
  }
  return score(pred, truth, kRotationCount);
}

}  // namespace ts
