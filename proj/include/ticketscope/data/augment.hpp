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
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ticketscope/core/rng.hpp"

namespace ts {

/// Augmentation magnitudes. `standard()` is pad-and-crop plus horizontal
/// flip; `exemplar()` adds brightness/contrast jitter and a small rotation.
struct AugmentPolicy {
  std::size_t crop_pad = 0;
  bool flip = false;
  double jitter = 0.0;        // brightness offset and contrast factor range
  double rotation_deg = 0.0;  // uniform in [-rotation_deg, rotation_deg]

  static AugmentPolicy none() { return {}; }
  static AugmentPolicy standard() { return {2, true, 0.0, 0.0}; }
  static AugmentPolicy exemplar() { return {2, true, 0.2, 10.0}; }

  static AugmentPolicy parse(const std::string& name) {
    if (name == "none") return none();
    if (name == "standard") return standard();
    if (name == "exemplar") return exemplar();
    throw ValueError("unknown augmentation policy '" + name + "'");
  }

  bool is_identity() const { return crop_pad == 0 && !flip && jitter == 0.0 && rotation_deg == 0.0; }
};

/// Augments one [C,H,W] image in [0,1]; output is clamped to [0,1] and is a
/// pure function of (image, policy, rng state).
inline std::vector<float> augment(std::span<const float> image, std::size_t channels, std::size_t height,
                                  std::size_t width, const AugmentPolicy& policy, Rng& rng) {
  std::vector<float> out(image.begin(), image.end());
  if (policy.is_identity()) return out;
  const std::size_t plane = height * width;

  if (policy.crop_pad > 0) {
    const long pad = static_cast<long>(policy.crop_pad);
    const long dy = static_cast<long>(rng.below(2 * policy.crop_pad + 1)) - pad;
    const long dx = static_cast<long>(rng.below(2 * policy.crop_pad + 1)) - pad;
    std::vector<float> src = out;
    for (std::size_t c = 0; c < channels; ++c) {
      for (long y = 0; y < static_cast<long>(height); ++y) {
        for (long x = 0; x < static_cast<long>(width); ++x) {
          const long sy = y + dy, sx = x + dx;
          const bool inside = sy >= 0 && sy < static_cast<long>(height) && sx >= 0 && sx < static_cast<long>(width);
          out[c * plane + static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)] =
              inside ? src[c * plane + static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx)] : 0.0f;
        }
      }
    }
  }

  if (policy.flip && rng.bernoulli(0.5)) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t y = 0; y < height; ++y) {
        float* row = out.data() + c * plane + y * width;
        std::reverse(row, row + width);
      }
    }
  }

  if (policy.rotation_deg > 0) {
    const double th = rng.uniform(-policy.rotation_deg, policy.rotation_deg) * std::numbers::pi / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    const double cy = (static_cast<double>(height) - 1) / 2, cx = (static_cast<double>(width) - 1) / 2;
    std::vector<float> src = out;
    for (std::size_t c = 0; c < channels; ++c) {
      const float* s = src.data() + c * plane;
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          // Bilinear sample at the inverse-rotated location, edges clamped.
          const double rx = ct * (x - cx) + st * (y - cy) + cx;
          const double ry = -st * (x - cx) + ct * (y - cy) + cy;
          const double fx = std::clamp(rx, 0.0, static_cast<double>(width - 1));
          const double fy = std::clamp(ry, 0.0, static_cast<double>(height - 1));
          const auto x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
          const std::size_t x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
          const double ax = fx - x0, ay = fy - y0;
          const double v = (1 - ay) * ((1 - ax) * s[y0 * width + x0] + ax * s[y0 * width + x1]) +
                           ay * ((1 - ax) * s[y1 * width + x0] + ax * s[y1 * width + x1]);
          out[c * plane + y * width + x] = static_cast<float>(v);
        }
      }
    }
  }

  if (policy.jitter > 0) {
    const double brightness = rng.uniform(-policy.jitter, policy.jitter);
    const double contrast = rng.uniform(1.0 - policy.jitter, 1.0 + policy.jitter);
    double mean = 0;
    for (float v : out) mean += v;
    mean /= static_cast<double>(out.size());
    for (float& v : out) v = static_cast<float>((v - mean) * contrast + mean + brightness);
  }

  for (float& v : out) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace ts
