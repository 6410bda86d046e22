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
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ticketscope/core/tensor.hpp"

namespace ts {

/// Label value of an example whose label is hidden (unlabeled split).
inline constexpr int kHiddenLabel = -1;

/// In-memory image set, pixels in [0,1], stored as N x C x H x W floats.
///
/// Datasets are immutable once built; batches are copied out as tensors of the
/// requested precision. An empty dataset is legal only as the unlabeled half of
/// a subset split.
struct Dataset {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t class_count = 0;
  std::string split = "train";
  std::vector<float> pixels;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  std::size_t image_size() const noexcept { return channels * height * width; }

  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(pixels).subspan(i * image_size(), image_size());
  }

  bool labels_hidden() const {
    for (int l : labels) {
      if (l != kHiddenLabel) return false;
    }
    return !labels.empty();
  }

  /// Throws ValueError if pixel count, pixel range or labels are inconsistent.
  void validate() const {
    if (pixels.size() != size() * image_size()) throw ValueError("dataset: pixel buffer does not match image count");
    for (int l : labels) {
      if (l != kHiddenLabel && (l < 0 || static_cast<std::size_t>(l) >= class_count)) {
        throw ValueError("dataset: label " + std::to_string(l) + " outside [0, " + std::to_string(class_count) + ")");
      }
    }
    for (float p : pixels) {
      if (!(p >= 0.0f && p <= 1.0f)) throw ValueError("dataset: pixel outside [0,1]");
    }
  }

  /// Copies images `idx` into an [n,C,H,W] tensor.
  template <class T>
  Tensor<T> batch(std::span<const std::size_t> idx) const {
    Tensor<T> out({idx.size(), channels, height, width});
    const std::size_t sz = image_size();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const float* src = pixels.data() + idx[i] * sz;
      T* dst = out.data() + i * sz;
      for (std::size_t j = 0; j < sz; ++j) dst[j] = static_cast<T>(src[j]);
    }
    return out;
  }

  std::vector<int> batch_labels(std::span<const std::size_t> idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
    return out;
  }

  /// Subset in the given index order.
  Dataset select(std::span<const std::size_t> idx) const {
    Dataset out = header_copy();
    out.pixels.reserve(idx.size() * image_size());
    out.labels.reserve(idx.size());
    for (auto i : idx) {
      auto img = image(i);
      out.pixels.insert(out.pixels.end(), img.begin(), img.end());
      out.labels.push_back(labels[i]);
    }
    return out;
  }

  Dataset header_copy() const {
    Dataset out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.class_count = class_count;
    out.split = split;
    return out;
  }

  std::vector<std::size_t> class_histogram() const {
    std::vector<std::size_t> h(class_count, 0);
    for (int l : labels) {
      if (l >= 0) ++h[static_cast<std::size_t>(l)];
    }
    return h;
  }
};

/// Concatenation of two datasets with identical geometry.
inline Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width) {
    throw ShapeError("concat: datasets have different image geometry");
  }
  Dataset out = a;
  out.class_count = std::max(a.class_count, b.class_count);
  out.pixels.insert(out.pixels.end(), b.pixels.begin(), b.pixels.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

}  // namespace ts
