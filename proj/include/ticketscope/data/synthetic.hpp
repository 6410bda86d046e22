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
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "ticketscope/core/rng.hpp"
#include "ticketscope/data/dataset.hpp"

namespace ts {

/// Knobs of the glyph renderer. `family` selects the glyph bank: two
/// families share image statistics but have disjoint class shapes, which is
/// how a transfer target is produced.
struct SyntheticStyle {
  std::uint64_t family = 0;
  std::size_t strokes = 4;         // polyline vertices per glyph
  double stroke_width = 0.11;      // in normalized [-1,1] units
  double scale_jitter = 0.15;
  double shift_jitter = 0.15;
  double rotation_jitter_deg = 10.0;
  double hue_jitter = 0.12;
  double pixel_noise = 0.06;
  /// Blend of every class glyph (and hue) toward a shared family prototype;
  /// 0 keeps classes fully distinct.
  double class_similarity = 0.0;
};

namespace detail {

struct Glyph {
  std::vector<std::array<double, 2>> points;  // polyline, y axis points up
  std::array<double, 2> dot;                  // off-line blob, breaks symmetry
  double hue;
};

inline std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  double r, g, b;
  switch (static_cast<int>(i) % 6) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

inline double segment_distance(double px, double py, const std::array<double, 2>& a,
                               const std::array<double, 2>& b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - a[0]) * dx + (py - a[1]) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = px - (a[0] + t * dx), ey = py - (a[1] + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

inline Glyph make_glyph(Rng rng, std::size_t vertices, double hue) {
  Glyph g;
  g.hue = hue;
  for (std::size_t i = 0; i < vertices; ++i) g.points.push_back({rng.uniform(-0.65, 0.65), rng.uniform(-0.65, 0.65)});
  // Keep consecutive vertices apart so every stroke is visible.
  for (std::size_t i = 1; i < g.points.size(); ++i) {
    while (std::hypot(g.points[i][0] - g.points[i - 1][0], g.points[i][1] - g.points[i - 1][1]) < 0.5) {
      g.points[i] = {rng.uniform(-0.65, 0.65), rng.uniform(-0.65, 0.65)};
    }
  }
  g.dot = {rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6)};
  return g;
}

}  // namespace detail

/// Procedurally rendered glyph images.
///
/// Each class owns a polyline glyph with an extra dot and a base hue; every
/// sample applies its own scale/shift/small rotation, hue jitter, background
/// level and pixel noise. Glyphs are drawn upright, so quarter-turn rotations
/// are recognizable and rotation prediction is learnable. Labels are assigned
/// round-robin, so class counts differ by at most one.
inline Dataset generate_synthetic(std::size_t n, std::size_t class_count, std::size_t size, std::uint64_t seed,
                                  const SyntheticStyle& style = {}) {
  if (size < 8) throw ValueError("generate_synthetic: image size must be >= 8");
  if (class_count == 0) throw ValueError("generate_synthetic: class_count must be positive");
  if (n == 0) throw ValueError("generate_synthetic: need at least one image");

  const Rng bank(Rng::mix(style.family * 0x9E3779B97F4A7C15ULL + 0x5EEDULL));
  if (!(style.class_similarity >= 0.0 && style.class_similarity < 1.0)) {
    throw ValueError("generate_synthetic: class_similarity must be in [0, 1)");
  }
  const double sim = style.class_similarity;
  const double base_hue = 0.37 * static_cast<double>(style.family);
  const detail::Glyph proto = detail::make_glyph(bank.split("prototype"), style.strokes, base_hue);
  std::vector<detail::Glyph> glyphs;
  for (std::size_t c = 0; c < class_count; ++c) {
    const double hue = base_hue + (1.0 - sim) * (static_cast<double>(c) + 0.5) / static_cast<double>(class_count);
    detail::Glyph g = detail::make_glyph(bank.split(c), style.strokes, hue);
    for (std::size_t k = 0; k < g.points.size(); ++k) {
      for (std::size_t a = 0; a < 2; ++a) g.points[k][a] = sim * proto.points[k][a] + (1.0 - sim) * g.points[k][a];
    }
    for (std::size_t a = 0; a < 2; ++a) g.dot[a] = sim * proto.dot[a] + (1.0 - sim) * g.dot[a];
    glyphs.push_back(std::move(g));
  }

  Dataset ds;
  ds.channels = 3;
  ds.height = size;
  ds.width = size;
  ds.class_count = class_count;
  ds.pixels.resize(n * 3 * size * size);
  ds.labels.resize(n);

  const Rng root(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % class_count;
    ds.labels[i] = static_cast<int>(cls);
    Rng rng = root.split(i);
    const auto& g = glyphs[cls];
    const double s = 1.0 - style.scale_jitter * rng.uniform();
    const double tx = rng.uniform(-style.shift_jitter, style.shift_jitter);
    const double ty = rng.uniform(-style.shift_jitter, style.shift_jitter);
    const double th = rng.uniform(-style.rotation_jitter_deg, style.rotation_jitter_deg) * std::numbers::pi / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    const auto fg = detail::hsv_to_rgb(g.hue + rng.uniform(-style.hue_jitter, style.hue_jitter),
                                       rng.uniform(0.6, 1.0), rng.uniform(0.75, 1.0));
    const float bg = static_cast<float>(rng.uniform(0.0, 0.35));
    const double half = static_cast<double>(size) / 2.0;
    float* img = ds.pixels.data() + i * 3 * size * size;
    for (std::size_t r = 0; r < size; ++r) {
      for (std::size_t c = 0; c < size; ++c) {
        // Pixel centre in [-1,1], y up; undo the sample transform into glyph space.
        const double x = (static_cast<double>(c) + 0.5 - half) / half - tx;
        const double y = (half - static_cast<double>(r) - 0.5) / half - ty;
        const double gx = (ct * x + st * y) / s;
        const double gy = (-st * x + ct * y) / s;
        double d = 1e9;
        for (std::size_t k = 1; k < g.points.size(); ++k) {
          d = std::min(d, detail::segment_distance(gx, gy, g.points[k - 1], g.points[k]));
        }
        d = std::min(d, std::hypot(gx - g.dot[0], gy - g.dot[1]) - 0.08);
        const double aa = 1.0 / half;
        const double cover = std::clamp((style.stroke_width - d) / aa + 0.5, 0.0, 1.0);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double v = bg + cover * (fg[ch] - bg) + style.pixel_noise * rng.normal();
          img[(ch * size + r) * size + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  return ds;
}

}  // namespace ts
