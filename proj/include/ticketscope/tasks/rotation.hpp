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
#include <string>
#include <utility>
#include <vector>

#include "ticketscope/core/rng.hpp"
#include "ticketscope/core/tensor.hpp"

namespace ts {

/// Quarter-turn angles {0, 90, 180, 270} degrees; label r means r turns.
inline constexpr int kRotationCount = 4;

inline int rotation_degrees(int label) { return 90 * (((label % 4) + 4) % 4); }

namespace detail {

// Counterclockwise quarter turns of one H x W plane into `dst`
// (W x H for odd turns).
template <class T>
void rotate_plane(const T* src, T* dst, std::size_t h, std::size_t w, int turns) {
  switch (turns) {
    case 0:
      std::copy(src, src + h * w, dst);
      break;
    case 1:  // out is W x H, out[i][j] = in[j][W-1-i]
      for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < h; ++j) dst[i * h + j] = src[j * w + (w - 1 - i)];
      break;
    case 2:
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) dst[i * w + j] = src[(h - 1 - i) * w + (w - 1 - j)];
      break;
    default:  // out[i][j] = in[H-1-j][i]
      for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < h; ++j) dst[i * h + j] = src[(h - 1 - j) * w + i];
      break;
  }
}

}  // namespace detail

/// Rotates a [C,H,W] image counterclockwise by `quarter_turns` x 90 degrees.
/// Odd turns swap H and W.
template <class T>
Tensor<T> rotate90(const Tensor<T>& image, int quarter_turns) {
  if (image.rank() != 3) throw ShapeError("rotate90: expected a [C,H,W] image, got " + shape_str(image.shape()));
  const int turns = ((quarter_turns % 4) + 4) % 4;
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<T> out(turns % 2 ? Shape{c, w, h} : Shape{c, h, w});
  for (std::size_t k = 0; k < c; ++k) detail::rotate_plane(image.data() + k * h * w, out.data() + k * h * w, h, w, turns);
  return out;
}

enum class RotnetMode { kAllFour, kSampled };

inline RotnetMode parse_rotnet_mode(const std::string& s) {
  if (s == "all_four") return RotnetMode::kAllFour;
  if (s == "sampled") return RotnetMode::kSampled;
  throw ValueError("unknown rotnet mode '" + s + "' (expected all_four or sampled)");
}

/// Rotation-prediction batch from square images [N,C,H,W].
///
/// all_four emits 4N images, image-major: rows 4i..4i+3 are image i turned
/// 0,1,2,3 times. sampled emits N images with uniformly drawn turns.
template <class T>
std::pair<Tensor<T>, std::vector<int>> rotnet_batch(const Tensor<T>& images, RotnetMode mode, Rng& rng) {
  if (images.rank() != 4) throw ShapeError("rotnet_batch: expected [N,C,H,W], got " + shape_str(images.shape()));
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (h != w) throw ShapeError("rotnet_batch: images must be square, got " + std::to_string(h) + "x" + std::to_string(w));
  const std::size_t per = mode == RotnetMode::kAllFour ? 4 : 1;
  const std::size_t plane = h * w, sz = c * plane;
  Tensor<T> out({n * per, c, h, w});
  std::vector<int> labels(n * per);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < per; ++r) {
      const int turns = mode == RotnetMode::kAllFour ? static_cast<int>(r) : static_cast<int>(rng.below(4));
      const std::size_t row = i * per + r;
      labels[row] = turns;
      for (std::size_t k = 0; k < c; ++k) {
        detail::rotate_plane(images.data() + i * sz + k * plane, out.data() + row * sz + k * plane, h, w, turns);
      }
    }
  }
  return {std::move(out), std::move(labels)};
}

}  // namespace ts
