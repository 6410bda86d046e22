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
#include <cstdint>
#include <string>
#include <vector>

#include "ticketscope/autograd/graph.hpp"
#include "ticketscope/autograd/ops.hpp"
#include "ticketscope/autograd/sgd.hpp"
#include "ticketscope/core/rng.hpp"
#include "ticketscope/model/registry.hpp"

namespace ts {

/// Desk-scale architecture description.
///
///   mini_conv: 3 x (conv3x3 - bn - relu - maxpool2) + dense head
///   mini_vgg:  3 x (conv3x3 - bn - relu - conv3x3 - bn - relu - maxpool2) + dense head
///
/// `widths` holds one channel count per block. Features are the flattened
/// output of the last block.
struct ArchSpec {
  std::string name = "mini_conv";
  std::size_t in_channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::vector<std::size_t> widths{16, 32, 64};
  std::size_t num_classes = 10;

  std::size_t convs_per_block() const { return name == "mini_vgg" ? 2 : 1; }
  std::size_t conv_layers() const { return widths.size() * convs_per_block(); }
  std::size_t feature_width() const {
    std::size_t h = height, w = width;
    for (std::size_t b = 0; b < widths.size(); ++b) {
      h /= 2;
      w /= 2;
    }
    return widths.back() * h * w;
  }

  void validate() const {
    if (name != "mini_conv" && name != "mini_vgg") throw ValueError("unknown architecture '" + name + "'");
    if (widths.size() != 3) throw ValueError(name + ": expected 3 block widths");
    for (auto w : widths) {
      if (w == 0) throw ValueError(name + ": block widths must be positive");
    }
    if (in_channels == 0) throw ValueError(name + ": input channels must be positive");
    if (height < 8 || width < 8) throw ValueError(name + ": input must be at least 8x8");
    if (num_classes == 0) throw ValueError(name + ": head needs at least one output");
  }

  static ArchSpec preset(const std::string& name) {
    ArchSpec s;
    s.name = name;
    if (name == "mini_conv") {
      s.widths = {16, 32, 64};
    } else if (name == "mini_vgg") {
      s.widths = {24, 48, 96};
    } else {
      throw ValueError("unknown architecture '" + name + "'");
    }
    return s;
  }

  /// Closed-form count of prunable weights (all conv kernels).
  std::size_t prunable_weights() const {
    std::size_t total = 0, in = in_channels;
    for (auto w : widths) {
      for (std::size_t c = 0; c < convs_per_block(); ++c) {
        total += w * in * 9;
        in = w;
      }
    }
    return total;
  }
};

template <class T>
class Model;
template <class T>
Model<T> build_model(const ArchSpec& spec, std::uint64_t seed);

/// Zero-mean Gaussian with variance 2 / fan_in, fan_in = prod(shape[1:]).
template <class T>
Tensor<T> he_init(const Shape& shape, std::uint64_t seed) {
  if (shape.empty()) throw ShapeError("he_init: empty shape");
  std::size_t fan_in = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  Rng rng(seed);
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(sd * rng.normal());
  return t;
}

template <class T>
class Model {
 public:
  struct ConvLayer {
    int layer_id;
    std::size_t weight, gamma, beta;  // registry indices
    std::size_t mean, var;            // buffer indices
    bool pool_after;
  };
  struct Head {
    std::string name;
    int layer_id;
    std::size_t weight, bias;
  };

  Model() = default;

  const ArchSpec& spec() const noexcept { return spec_; }
  ParamRegistry<T>& registry() noexcept { return registry_; }
  const ParamRegistry<T>& registry() const noexcept { return registry_; }
  std::vector<Buffer<T>>& buffers() noexcept { return buffers_; }
  const std::vector<Buffer<T>>& buffers() const noexcept { return buffers_; }
  const std::vector<Head>& heads() const noexcept { return heads_; }
  const std::vector<ConvLayer>& conv_layers() const noexcept { return convs_; }
  std::size_t feature_width() const { return spec_.feature_width(); }

  std::size_t head_index(const std::string& name) const {
    for (std::size_t i = 0; i < heads_.size(); ++i) {
      if (heads_[i].name == name) return i;
    }
    throw ValueError("model has no head named " + name);
  }
  bool has_head(const std::string& name) const {
    for (const auto& h : heads_) {
      if (h.name == name) return true;
    }
    return false;
  }
  std::size_t head_width(std::size_t h) const { return registry_[heads_.at(h).weight].value.dim(0); }

  /// Appends a fresh dense head (he_init weights, zero bias) over the features.
  std::size_t add_head(const std::string& name, std::size_t width, std::uint64_t seed) {
    if (has_head(name)) throw ValueError("duplicate head " + name);
    const int layer_id = next_layer_id_++;
    Rng rng(seed);
    Head h{name, layer_id, 0, 0};
    h.weight = registry_.add({layer_id, name + ".weight", ParamKind::kDense, false,
                              he_init<T>({width, feature_width()}, rng.split(name + ".weight").next_u64()),
                              {}});
    h.bias = registry_.add({layer_id, name + ".bias", ParamKind::kBias, false, Tensor<T>({width}), {}});
    heads_.push_back(h);
    return heads_.size() - 1;
  }

  /// Re-draws head `h` with a new output width; backbone untouched.
  void replace_head(std::size_t h, std::size_t width, std::uint64_t seed) {
    Head& head = heads_.at(h);
    Rng rng(seed);
    registry_[head.weight].value =
        he_init<T>({width, feature_width()}, rng.split(head.name + ".weight").next_u64());
    registry_[head.weight].grad = {};
    registry_[head.bias].value = Tensor<T>({width});
    registry_[head.bias].grad = {};
  }

  void check_input(const Tensor<T>& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != spec_.in_channels || batch.dim(2) != spec_.height ||
        batch.dim(3) != spec_.width) {
      throw ShapeError(spec_.name + ": expected input (N," + std::to_string(spec_.in_channels) + "," +
                       std::to_string(spec_.height) + "," + std::to_string(spec_.width) + "), got " +
                       shape_str(batch.shape()));
    }
  }

  /// Penultimate activations [N, feature_width]. With `backbone_grad` false
  /// the backbone enters the graph as constants.
  NodeId features(Graph<T>& g, NodeId input, ops::Mode mode, bool backbone_grad = true) {
    check_input(g.value(input));
    NodeId x = input;
    for (const auto& c : convs_) {
      auto& w = registry_[c.weight];
      auto& ga = registry_[c.gamma];
      auto& be = registry_[c.beta];
      x = ops::conv2d(g, x, param(g, w, backbone_grad), std::nullopt, 1, 1);
      ops::NormStats<T> stats{&buffers_[c.mean].value, &buffers_[c.var].value, 0.1};
      x = ops::batch_norm(g, x, param(g, ga, backbone_grad), param(g, be, backbone_grad), stats, mode);
      x = ops::relu(g, x);
      if (c.pool_after) x = ops::max_pool2d(g, x, 2);
    }
    return ops::flatten(g, x);
  }

  NodeId head(Graph<T>& g, NodeId feats, std::size_t h, bool grad = true) {
    const Head& hd = heads_.at(h);
    return ops::linear(g, feats, param(g, registry_[hd.weight], grad), param(g, registry_[hd.bias], grad));
  }

  NodeId forward(Graph<T>& g, NodeId input, ops::Mode mode, std::size_t h = 0) {
    return head(g, features(g, input, mode), h);
  }

  /// Eval-mode logits without building gradients.
  Tensor<T> predict(const Tensor<T>& batch, std::size_t h = 0) const {
    Graph<T> g;
    auto& self = const_cast<Model&>(*this);  // eval mode touches no state
    const NodeId f = self.features(g, g.constant(batch), ops::Mode::kEval, false);
    return g.value(self.head(g, f, h, false));
  }

  /// Eval-mode penultimate features; no parameter or statistic is modified.
  Tensor<T> extract_features(const Tensor<T>& batch) const {
    Graph<T> g;
    auto& self = const_cast<Model&>(*this);
    return g.value(self.features(g, g.constant(batch), ops::Mode::kEval, false));
  }

  void zero_grad() {
    for (auto& p : registry_.entries()) p.grad = {};
  }

  friend Model build_model<T>(const ArchSpec& spec, std::uint64_t seed);

 private:
  static NodeId param(Graph<T>& g, Parameter<T>& p, bool grad) {
    return g.param(p.value, grad ? &p.grad : nullptr);
  }

  ArchSpec spec_;
  ParamRegistry<T> registry_;
  std::vector<Buffer<T>> buffers_;
  std::vector<ConvLayer> convs_;
  std::vector<Head> heads_;
  int next_layer_id_ = 1;
};

/// Builds the backbone plus one head named "classifier" of width
/// `spec.num_classes`. Conv kernels are prunable; norm affines and the head
/// are protected. Parameters are he_init draws keyed by (seed, name).
template <class T>
Model<T> build_model(const ArchSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model<T> m;
  m.spec_ = spec;
  Rng rng(seed);
  std::size_t in = spec.in_channels;
  for (std::size_t b = 0; b < spec.widths.size(); ++b) {
    for (std::size_t k = 0; k < spec.convs_per_block(); ++k) {
      const int id = m.next_layer_id_++;
      const std::string sid = std::to_string(id);
      const std::size_t out = spec.widths[b];
      typename Model<T>::ConvLayer layer{};
      layer.layer_id = id;
      layer.weight = m.registry_.add({id, "conv" + sid + ".weight", ParamKind::kConv, true,
                                      he_init<T>({out, in, 3, 3}, rng.split("conv" + sid + ".weight").next_u64()),
                                      {}});
      layer.gamma = m.registry_.add({id, "bn" + sid + ".gamma", ParamKind::kNormAffine, false, Tensor<T>({out}, T(1)), {}});
      layer.beta = m.registry_.add({id, "bn" + sid + ".beta", ParamKind::kNormAffine, false, Tensor<T>({out}), {}});
      m.buffers_.push_back({id, "bn" + sid + ".running_mean", Tensor<T>({out})});
      layer.mean = m.buffers_.size() - 1;
      m.buffers_.push_back({id, "bn" + sid + ".running_var", Tensor<T>({out}, T(1))});
      layer.var = m.buffers_.size() - 1;
      layer.pool_after = k + 1 == spec.convs_per_block();
      m.convs_.push_back(layer);
      in = out;
    }
  }
  m.add_head("classifier", spec.num_classes, rng.split("heads").next_u64());
  return m;
}

}  // namespace ts
