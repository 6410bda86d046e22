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
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ticketscope/autograd/gemm.hpp"
#include "ticketscope/autograd/graph.hpp"

namespace ts::ops {

namespace detail {

inline void require_rank(const Shape& s, std::size_t r, const char* op) {
  if (s.size() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(s));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct ConvGeometry {
  std::size_t n, c, h, w;      // input
  std::size_t k, kh, kw;       // kernel
  std::size_t stride, pad;
  std::size_t oh, ow;          // output

  std::size_t patch() const { return c * kh * kw; }
  std::size_t plane() const { return oh * ow; }
};

inline ConvGeometry conv_geometry(const Shape& in, const Shape& kernel, std::size_t stride,
                                  std::size_t pad) {
  detail::require_rank(in, 4, "conv2d input");
  detail::require_rank(kernel, 4, "conv2d kernel");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (kernel[1] != in[1]) {
    throw ShapeError("conv2d: kernel has " + std::to_string(kernel[1]) + " input channels, input has " +
                     std::to_string(in[1]));
  }
  ConvGeometry g{in[0], in[1], in[2], in[3], kernel[0], kernel[2], kernel[3], stride, pad, 0, 0};
  const std::size_t eh = in[2] + 2 * pad;
  const std::size_t ew = in[3] + 2 * pad;
  if (eh < g.kh || ew < g.kw || (eh - g.kh) % stride != 0 || (ew - g.kw) % stride != 0) {
    throw ShapeError("conv2d: output size is not integral for input " + shape_str(in) + ", kernel " +
                     shape_str(kernel) + ", stride " + std::to_string(stride) + ", padding " +
                     std::to_string(pad));
  }
  g.oh = (eh - g.kh) / stride + 1;
  g.ow = (ew - g.kw) / stride + 1;
  return g;
}

namespace detail {

// cols is [patch x (n * plane)], column index = image * plane + output pixel.
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t np = g.n * g.plane();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * np;
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* src = x + (n * g.c + c) * g.h * g.w;
          T* dst = row + n * g.plane();
          for (std::size_t oh = 0; oh < g.oh; ++oh) {
            const long ih = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad);
            T* drow = dst + oh * g.ow;
            if (ih < 0 || ih >= static_cast<long>(g.h)) {
              for (std::size_t ow = 0; ow < g.ow; ++ow) drow[ow] = T(0);
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(ih) * g.w;
            for (std::size_t ow = 0; ow < g.ow; ++ow) {
              const long iw = static_cast<long>(ow * g.stride + j) - static_cast<long>(g.pad);
              drow[ow] = (iw < 0 || iw >= static_cast<long>(g.w)) ? T(0) : srow[iw];
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const ConvGeometry& g, const T* cols, T* dx) {
  const std::size_t np = g.n * g.plane();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * np;
        for (std::size_t n = 0; n < g.n; ++n) {
          T* dst = dx + (n * g.c + c) * g.h * g.w;
          const T* src = row + n * g.plane();
          for (std::size_t oh = 0; oh < g.oh; ++oh) {
            const long ih = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad);
            if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
            T* drow = dst + static_cast<std::size_t>(ih) * g.w;
            const T* srow = src + oh * g.ow;
            for (std::size_t ow = 0; ow < g.ow; ++ow) {
              const long iw = static_cast<long>(ow * g.stride + j) - static_cast<long>(g.pad);
              if (iw >= 0 && iw < static_cast<long>(g.w)) drow[iw] += srow[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation, input [N,C,H,W], kernel [K,C,kh,kw], optional bias [K].
template <class T>
NodeId conv2d(Graph<T>& graph, NodeId input, NodeId kernel, std::optional<NodeId> bias,
              std::size_t stride = 1, std::size_t pad = 0) {
  const Tensor<T>& x = graph.value(input);
  const Tensor<T>& w = graph.value(kernel);
  const ConvGeometry geo = conv_geometry(x.shape(), w.shape(), stride, pad);
  if (bias && (graph.value(*bias).rank() != 1 || graph.value(*bias).dim(0) != geo.k)) {
    throw ShapeError("conv2d: bias must have shape (" + std::to_string(geo.k) + ")");
  }
  const std::size_t np = geo.n * geo.plane();
  auto cols = std::make_shared<std::vector<T>>(geo.patch() * np);
  detail::im2col(geo, x.data(), cols->data());

  std::vector<T> tmp(geo.k * np);
  ts::detail::gemm<T>(false, false, geo.k, np, geo.patch(), w.data(), cols->data(), tmp.data(), false);

  Tensor<T> out({geo.n, geo.k, geo.oh, geo.ow});
  const T* b = bias ? graph.value(*bias).data() : nullptr;
  for (std::size_t n = 0; n < geo.n; ++n) {
    for (std::size_t k = 0; k < geo.k; ++k) {
      const T* src = tmp.data() + k * np + n * geo.plane();
      T* dst = out.data() + (n * geo.k + k) * geo.plane();
      const T off = b ? b[k] : T(0);
      for (std::size_t p = 0; p < geo.plane(); ++p) dst[p] = src[p] + off;
    }
  }

  std::vector<NodeId> inputs{input, kernel};
  if (bias) inputs.push_back(*bias);
  return graph.push(OpTag::kConv2d, std::move(inputs), std::move(out),
                    [geo, cols, input, kernel, bias](Graph<T>& g, NodeId self) {
                      const std::size_t np = geo.n * geo.plane();
                      const Tensor<T>& gy = g.grad(self);
                      std::vector<T> gtmp(geo.k * np);
                      for (std::size_t n = 0; n < geo.n; ++n) {
                        for (std::size_t k = 0; k < geo.k; ++k) {
                          const T* src = gy.data() + (n * geo.k + k) * geo.plane();
                          std::copy(src, src + geo.plane(), gtmp.data() + k * np + n * geo.plane());
                        }
                      }
                      if (bias && g.requires_grad(*bias)) {
                        Tensor<T>& gb = g.grad(*bias);
                        for (std::size_t k = 0; k < geo.k; ++k) {
                          T acc = 0;
                          const T* row = gtmp.data() + k * np;
                          for (std::size_t j = 0; j < np; ++j) acc += row[j];
                          gb[k] += acc;
                        }
                      }
                      if (g.requires_grad(kernel)) {
                        ts::detail::gemm<T>(false, true, geo.k, geo.patch(), np, gtmp.data(), cols->data(),
                                            g.grad(kernel).data(), true);
                      }
                      if (g.requires_grad(input)) {
                        std::vector<T> gcols(geo.patch() * np);
                        ts::detail::gemm<T>(true, false, geo.patch(), np, geo.k, g.value(kernel).data(),
                                            gtmp.data(), gcols.data(), false);
                        detail::col2im(geo, gcols.data(), g.grad(input).data());
                      }
                    });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

enum class Mode { kTrain, kEval };

/// Running statistics owned by the model; updated in place in train mode.
template <class T>
struct NormStats {
  Tensor<T>* mean = nullptr;
  Tensor<T>* var = nullptr;
  double momentum = 0.1;
};

/// Per-channel normalization of [N,C,H,W] or [N,C] input.
///
/// Train mode normalizes with biased batch statistics and folds the batch mean
/// and unbiased variance into the running estimates; eval mode uses the
/// running estimates and is an affine map of the input.
template <class T>
NodeId batch_norm(Graph<T>& graph, NodeId input, NodeId gamma, NodeId beta, NormStats<T> stats,
                  Mode mode, double eps = 1e-5) {
  const Tensor<T>& x = graph.value(input);
  if (x.rank() != 4 && x.rank() != 2) throw ShapeError("batch_norm: input must be rank 2 or 4");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  const std::size_t m = n * hw;
  if (graph.value(gamma).size() != c || graph.value(beta).size() != c) {
    throw ShapeError("batch_norm: gamma/beta must have " + std::to_string(c) + " entries");
  }
  if (mode == Mode::kTrain && m < 2) throw ShapeError("batch_norm: train mode needs N*H*W >= 2");
  if (mode == Mode::kEval && (!stats.mean || !stats.var)) {
    throw ValueError("batch_norm: eval mode requires running statistics");
  }

  const T* g = graph.value(gamma).data();
  const T* b = graph.value(beta).data();
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto invstd = std::make_shared<std::vector<double>>(c);
  Tensor<T> out(x.shape());

  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::kTrain) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.data() + (i * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) s += p[j];
      }
      mean = s / static_cast<double>(m);
      double ss = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.data() + (i * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          const double d = p[j] - mean;
          ss += d * d;
        }
      }
      var = ss / static_cast<double>(m);
      if (stats.mean && stats.var) {
        T& rm = (*stats.mean)[ch];
        T& rv = (*stats.var)[ch];
        rm = static_cast<T>((1.0 - stats.momentum) * rm + stats.momentum * mean);
        rv = static_cast<T>((1.0 - stats.momentum) * rv +
                            stats.momentum * var * static_cast<double>(m) / static_cast<double>(m - 1));
      }
    } else {
      mean = (*stats.mean)[ch];
      var = (*stats.var)[ch];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    (*invstd)[ch] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        const T xh = static_cast<T>((x[base + j] - mean) * is);
        (*xhat)[base + j] = xh;
        out[base + j] = g[ch] * xh + b[ch];
      }
    }
  }

  const bool train = mode == Mode::kTrain;
  return graph.push(OpTag::kBatchNorm, {input, gamma, beta}, std::move(out),
                    [=](Graph<T>& gr, NodeId self) {
                      const Tensor<T>& gy = gr.grad(self);
                      const T* gam = gr.value(gamma).data();
                      std::vector<double> sum_dy(c, 0.0), sum_dy_xh(c, 0.0);
                      for (std::size_t ch = 0; ch < c; ++ch) {
                        for (std::size_t i = 0; i < n; ++i) {
                          const std::size_t base = (i * c + ch) * hw;
                          for (std::size_t j = 0; j < hw; ++j) {
                            sum_dy[ch] += gy[base + j];
                            sum_dy_xh[ch] += static_cast<double>(gy[base + j]) * (*xhat)[base + j];
                          }
                        }
                      }
                      if (gr.requires_grad(gamma)) {
                        auto& gg = gr.grad(gamma);
                        for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += static_cast<T>(sum_dy_xh[ch]);
                      }
                      if (gr.requires_grad(beta)) {
                        auto& gb = gr.grad(beta);
                        for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += static_cast<T>(sum_dy[ch]);
                      }
                      if (!gr.requires_grad(input)) return;
                      auto& gx = gr.grad(input);
                      const double md = static_cast<double>(m);
                      for (std::size_t ch = 0; ch < c; ++ch) {
                        const double scale = gam[ch] * (*invstd)[ch];
                        for (std::size_t i = 0; i < n; ++i) {
                          const std::size_t base = (i * c + ch) * hw;
                          for (std::size_t j = 0; j < hw; ++j) {
                            const double dy = gy[base + j];
                            if (train) {
                              gx[base + j] += static_cast<T>(
                                  scale * (dy - sum_dy[ch] / md - (*xhat)[base + j] * sum_dy_xh[ch] / md));
                            } else {
                              gx[base + j] += static_cast<T>(scale * dy);
                            }
                          }
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// Pointwise and shape ops
// ---------------------------------------------------------------------------

template <class T>
NodeId relu(Graph<T>& graph, NodeId input) {
  const Tensor<T>& x = graph.value(input);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return graph.push(OpTag::kRelu, {input}, std::move(out), [input](Graph<T>& g, NodeId self) {
    const Tensor<T>& x = g.value(input);
    const Tensor<T>& gy = g.grad(self);
    Tensor<T>& gx = g.grad(input);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > T(0)) gx[i] += gy[i];
    }
  });
}

/// Non-overlapping max pooling with a square window; trailing rows/columns
/// that do not fill a window are dropped. Ties resolve to the first element.
template <class T>
NodeId max_pool2d(Graph<T>& graph, NodeId input, std::size_t window = 2) {
  const Tensor<T>& x = graph.value(input);
  detail::require_rank(x.shape(), 4, "max_pool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / window, ow = w / window;
  if (oh == 0 || ow == 0) throw ShapeError("max_pool2d: input smaller than window");
  Tensor<T> out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* src = x.data() + nc * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j, ++o) {
        std::size_t best = (i * window) * w + j * window;
        for (std::size_t a = 0; a < window; ++a) {
          for (std::size_t b = 0; b < window; ++b) {
            const std::size_t idx = (i * window + a) * w + j * window + b;
            if (src[idx] > src[best]) best = idx;
          }
        }
        out[o] = src[best];
        (*argmax)[o] = nc * h * w + best;
      }
    }
  }
  return graph.push(OpTag::kMaxPool, {input}, std::move(out), [input, argmax](Graph<T>& g, NodeId self) {
    const Tensor<T>& gy = g.grad(self);
    Tensor<T>& gx = g.grad(input);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[(*argmax)[i]] += gy[i];
  });
}

/// [N, ...] -> [N, prod(...)].
template <class T>
NodeId flatten(Graph<T>& graph, NodeId input) {
  const Tensor<T>& x = graph.value(input);
  const std::size_t n = x.dim(0);
  return graph.push(OpTag::kFlatten, {input}, x.reshaped({n, x.size() / n}),
                    [input](Graph<T>& g, NodeId self) {
                      const Tensor<T>& gy = g.grad(self);
                      Tensor<T>& gx = g.grad(input);
                      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                    });
}

/// Affine map y = x W^T + b with x [N,F], W [O,F], b [O].
template <class T>
NodeId linear(Graph<T>& graph, NodeId input, NodeId weight, std::optional<NodeId> bias) {
  const Tensor<T>& x = graph.value(input);
  const Tensor<T>& w = graph.value(weight);
  detail::require_rank(x.shape(), 2, "linear input");
  detail::require_rank(w.shape(), 2, "linear weight");
  const std::size_t n = x.dim(0), f = x.dim(1), o = w.dim(0);
  if (w.dim(1) != f) {
    throw ShapeError("linear: weight " + shape_str(w.shape()) + " does not accept " + std::to_string(f) +
                     " features");
  }
  if (bias && graph.value(*bias).size() != o) throw ShapeError("linear: bias size mismatch");
  Tensor<T> out({n, o});
  ts::detail::gemm<T>(false, true, n, o, f, x.data(), w.data(), out.data(), false);
  if (bias) {
    const T* b = graph.value(*bias).data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < o; ++j) out[i * o + j] += b[j];
    }
  }
  std::vector<NodeId> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  return graph.push(OpTag::kLinear, std::move(inputs), std::move(out),
                    [=](Graph<T>& g, NodeId self) {
                      const Tensor<T>& gy = g.grad(self);
                      if (g.requires_grad(input)) {
                        ts::detail::gemm<T>(false, false, n, f, o, gy.data(), g.value(weight).data(),
                                            g.grad(input).data(), true);
                      }
                      if (g.requires_grad(weight)) {
                        ts::detail::gemm<T>(true, false, o, f, n, gy.data(), g.value(input).data(),
                                            g.grad(weight).data(), true);
                      }
                      if (bias && g.requires_grad(*bias)) {
                        Tensor<T>& gb = g.grad(*bias);
                        for (std::size_t i = 0; i < n; ++i) {
                          for (std::size_t j = 0; j < o; ++j) gb[j] += gy[i * o + j];
                        }
                      }
                    });
}

template <class T>
NodeId add(Graph<T>& graph, NodeId a, NodeId b) {
  const Tensor<T>& x = graph.value(a);
  const Tensor<T>& y = graph.value(b);
  require_same_shape(x, y, "add");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return graph.push(OpTag::kAdd, {a, b}, std::move(out), [a, b](Graph<T>& g, NodeId self) {
    const Tensor<T>& gy = g.grad(self);
    for (NodeId in : {a, b}) {
      if (!g.requires_grad(in)) continue;
      Tensor<T>& gx = g.grad(in);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
  });
}

template <class T>
NodeId mul(Graph<T>& graph, NodeId a, NodeId b) {
  const Tensor<T>& x = graph.value(a);
  const Tensor<T>& y = graph.value(b);
  require_same_shape(x, y, "mul");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return graph.push(OpTag::kMul, {a, b}, std::move(out), [a, b](Graph<T>& g, NodeId self) {
    const Tensor<T>& gy = g.grad(self);
    const Tensor<T>& xa = g.value(a);
    const Tensor<T>& xb = g.value(b);
    if (g.requires_grad(a)) {
      Tensor<T>& ga = g.grad(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * xb[i];
    }
    if (g.requires_grad(b)) {
      Tensor<T>& gb = g.grad(b);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * xa[i];
    }
  });
}

template <class T>
NodeId scale(Graph<T>& graph, NodeId a, T factor) {
  const Tensor<T>& x = graph.value(a);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return graph.push(OpTag::kScale, {a}, std::move(out), [a, factor](Graph<T>& g, NodeId self) {
    const Tensor<T>& gy = g.grad(self);
    Tensor<T>& gx = g.grad(a);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * factor;
  });
}

/// Sum of all elements, as a [1] tensor.
template <class T>
NodeId sum(Graph<T>& graph, NodeId a) {
  const Tensor<T>& x = graph.value(a);
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  return graph.push(OpTag::kSum, {a}, Tensor<T>({1}, static_cast<T>(s)), [a](Graph<T>& g, NodeId self) {
    const T gy = g.grad(self)[0];
    Tensor<T>& gx = g.grad(a);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy;
  });
}

/// Rows `indices` of a rank >= 1 tensor; backward scatter-adds.
template <class T>
NodeId gather_rows(Graph<T>& graph, NodeId input, std::vector<std::size_t> indices) {
  const Tensor<T>& x = graph.value(input);
  const std::size_t rows = x.dim(0);
  const std::size_t stride = x.size() / rows;
  if (indices.empty()) throw ShapeError("gather_rows: empty index list");
  Shape shape = x.shape();
  shape[0] = indices.size();
  Tensor<T> out(shape);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= rows) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(x.data() + indices[r] * stride, stride, out.data() + r * stride);
  }
  return graph.push(OpTag::kGatherRows, {input}, std::move(out),
                    [input, stride, indices = std::move(indices)](Graph<T>& g, NodeId self) {
                      const Tensor<T>& gy = g.grad(self);
                      Tensor<T>& gx = g.grad(input);
                      for (std::size_t r = 0; r < indices.size(); ++r) {
                        for (std::size_t j = 0; j < stride; ++j) gx[indices[r] * stride + j] += gy[r * stride + j];
                      }
                    });
}

template <class T>
NodeId slice_rows(Graph<T>& graph, NodeId input, std::size_t begin, std::size_t end) {
  const Tensor<T>& x = graph.value(input);
  if (begin >= end || end > x.dim(0)) throw ShapeError("slice_rows: bad row range");
  const std::size_t stride = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  Tensor<T> out(shape, std::vector<T>(x.data() + begin * stride, x.data() + end * stride));
  return graph.push(OpTag::kSliceRows, {input}, std::move(out),
                    [input, begin, stride](Graph<T>& g, NodeId self) {
                      const Tensor<T>& gy = g.grad(self);
                      Tensor<T>& gx = g.grad(input);
                      for (std::size_t i = 0; i < gy.size(); ++i) gx[begin * stride + i] += gy[i];
                    });
}

/// Row-wise x / max(||x||_2, eps) for x [N,D].
template <class T>
NodeId l2_normalize(Graph<T>& graph, NodeId input, double eps = 1e-12) {
  const Tensor<T>& x = graph.value(input);
  detail::require_rank(x.shape(), 2, "l2_normalize");
  const std::size_t n = x.dim(0), d = x.dim(1);
  auto norms = std::make_shared<std::vector<double>>(n);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(x[i * d + j]) * x[i * d + j];
    const double nrm = std::max(std::sqrt(s), eps);
    (*norms)[i] = nrm;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = static_cast<T>(x[i * d + j] / nrm);
  }
  return graph.push(OpTag::kL2Normalize, {input}, std::move(out),
                    [=](Graph<T>& g, NodeId self) {
                      const Tensor<T>& y = g.value(self);
                      const Tensor<T>& gy = g.grad(self);
                      Tensor<T>& gx = g.grad(input);
                      for (std::size_t i = 0; i < n; ++i) {
                        const double nrm = (*norms)[i];
                        double dot = 0;
                        for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(y[i * d + j]) * gy[i * d + j];
                        const bool clamped = nrm <= eps;
                        for (std::size_t j = 0; j < d; ++j) {
                          const double v = clamped ? gy[i * d + j] : gy[i * d + j] - y[i * d + j] * dot;
                          gx[i * d + j] += static_cast<T>(v / nrm);
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean over the batch of -log softmax(logits)[label], logits [N,C].
template <class T>
NodeId softmax_cross_entropy(Graph<T>& graph, NodeId logits, std::span<const int> labels) {
  const Tensor<T>& z = graph.value(logits);
  detail::require_rank(z.shape(), 2, "softmax_cross_entropy");
  const std::size_t n = z.dim(0), c = z.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  auto probs = std::make_shared<std::vector<double>>(n * c);
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw ValueError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(c) + ")");
    }
    const T* row = z.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double se = 0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
    const double lse = mx + std::log(se);
    total += lse - row[y];
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - lse);
  }
  const double loss = total / static_cast<double>(n);
  return graph.push(OpTag::kSoftmaxCrossEntropy, {logits}, Tensor<T>({1}, static_cast<T>(loss)),
                    [=](Graph<T>& g, NodeId self) {
                      const double gy = g.grad(self)[0] / static_cast<double>(n);
                      Tensor<T>& gz = g.grad(logits);
                      for (std::size_t i = 0; i < n; ++i) {
                        for (std::size_t j = 0; j < c; ++j) {
                          const double onehot = static_cast<int>(j) == (*lab)[i] ? 1.0 : 0.0;
                          gz[i * c + j] += static_cast<T>(gy * ((*probs)[i * c + j] - onehot));
                        }
                      }
                    });
}

/// Mean over rows of max(0, ||a-p|| - ||a-n|| + margin), inputs [N,D].
template <class T>
NodeId triplet_margin_loss(Graph<T>& graph, NodeId anchor, NodeId positive, NodeId negative,
                           double margin) {
  const Tensor<T>& a = graph.value(anchor);
  const Tensor<T>& p = graph.value(positive);
  const Tensor<T>& q = graph.value(negative);
  detail::require_rank(a.shape(), 2, "triplet_margin_loss");
  require_same_shape(a, p, "triplet_margin_loss positive");
  require_same_shape(a, q, "triplet_margin_loss negative");
  if (!(margin > 0)) throw ValueError("triplet_margin_loss: margin must be positive");
  const std::size_t n = a.dim(0), d = a.dim(1);
  auto dap = std::make_shared<std::vector<double>>(n);
  auto dan = std::make_shared<std::vector<double>>(n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double s1 = 0, s2 = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double u = static_cast<double>(a[i * d + j]) - p[i * d + j];
      const double v = static_cast<double>(a[i * d + j]) - q[i * d + j];
      s1 += u * u;
      s2 += v * v;
    }
    (*dap)[i] = std::sqrt(s1);
    (*dan)[i] = std::sqrt(s2);
    total += std::max(0.0, (*dap)[i] - (*dan)[i] + margin);
  }
  return graph.push(
      OpTag::kTripletMargin, {anchor, positive, negative},
      Tensor<T>({1}, static_cast<T>(total / static_cast<double>(n))),
      [=](Graph<T>& g, NodeId self) {
        const double gy = g.grad(self)[0] / static_cast<double>(n);
        const Tensor<T>& av = g.value(anchor);
        const Tensor<T>& pv = g.value(positive);
        const Tensor<T>& qv = g.value(negative);
        Tensor<T>* ga = g.requires_grad(anchor) ? &g.grad(anchor) : nullptr;
        Tensor<T>* gp = g.requires_grad(positive) ? &g.grad(positive) : nullptr;
        Tensor<T>* gq = g.requires_grad(negative) ? &g.grad(negative) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          if ((*dap)[i] - (*dan)[i] + margin <= 0.0) continue;
          const double ip = (*dap)[i] > 0 ? gy / (*dap)[i] : 0.0;
          const double in = (*dan)[i] > 0 ? gy / (*dan)[i] : 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t k = i * d + j;
            const double u = static_cast<double>(av[k]) - pv[k];
            const double v = static_cast<double>(av[k]) - qv[k];
            if (ga) (*ga)[k] += static_cast<T>(u * ip - v * in);
            if (gp) (*gp)[k] += static_cast<T>(-u * ip);
            if (gq) (*gq)[k] += static_cast<T>(v * in);
          }
        }
      });
}

}  // namespace ts::ops
