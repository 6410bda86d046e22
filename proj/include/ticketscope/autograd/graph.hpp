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
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ticketscope/core/tensor.hpp"

namespace ts {

using NodeId = std::size_t;

enum class OpTag {
  kConstant,
  kLeaf,
  kParam,
  kConv2d,
  kBatchNorm,
  kRelu,
  kMaxPool,
  kFlatten,
  kLinear,
  kSoftmaxCrossEntropy,
  kTripletMargin,
  kL2Normalize,
  kGatherRows,
  kSliceRows,
  kAdd,
  kMul,
  kScale,
  kSum,
};

inline const char* op_name(OpTag op) {
  switch (op) {
    case OpTag::kConstant: return "constant";
    case OpTag::kLeaf: return "leaf";
    case OpTag::kParam: return "param";
    case OpTag::kConv2d: return "conv2d";
    case OpTag::kBatchNorm: return "batch_norm";
    case OpTag::kRelu: return "relu";
    case OpTag::kMaxPool: return "max_pool";
    case OpTag::kFlatten: return "flatten";
    case OpTag::kLinear: return "linear";
    case OpTag::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpTag::kTripletMargin: return "triplet_margin_loss";
    case OpTag::kL2Normalize: return "l2_normalize";
    case OpTag::kGatherRows: return "gather_rows";
    case OpTag::kSliceRows: return "slice_rows";
    case OpTag::kAdd: return "add";
    case OpTag::kMul: return "mul";
    case OpTag::kScale: return "scale";
    case OpTag::kSum: return "sum";
  }
  return "?";
}

/// Tape of a single forward pass.
///
/// Nodes are appended in evaluation order, so the node vector is always a
/// topological order and backward is a plain reverse sweep. A graph lives for
/// one step; parameters enter it by reference and their gradients are added
/// into the caller's accumulation buffers when `backward` finishes.
template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  struct Node {
    OpTag op = OpTag::kConstant;
    std::vector<NodeId> inputs;
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    Tensor<T>* grad_sink = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  NodeId constant(Tensor<T> value) { return push(OpTag::kConstant, {}, std::move(value), false, {}); }

  /// Differentiable input owned by the graph; read its gradient with grad().
  NodeId leaf(Tensor<T> value) { return push(OpTag::kLeaf, {}, std::move(value), true, {}); }

  /// Parameter held outside the graph. `sink`, if given, receives the gradient.
  NodeId param(const Tensor<T>& value, Tensor<T>* sink) {
    Node n;
    n.op = OpTag::kParam;
    n.external = &value;
    n.grad_sink = sink;
    n.requires_grad = sink != nullptr;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId push(OpTag op, std::vector<NodeId> inputs, Tensor<T> value, BackwardFn backward) {
    bool rg = false;
    for (auto i : inputs) rg = rg || nodes_.at(i).requires_grad;
    return push(op, std::move(inputs), std::move(value), rg, std::move(backward));
  }

  const Tensor<T>& value(NodeId id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, zero-allocated on first use.
  Tensor<T>& grad(NodeId id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
    return n.grad;
  }

  bool has_grad(NodeId id) const { return !nodes_.at(id).grad.empty(); }

  std::size_t size() const noexcept { return nodes_.size(); }
  OpTag op(NodeId id) const { return nodes_.at(id).op; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }

  /// Reverse sweep from a scalar node. Accumulation order is fixed by node
  /// order, so repeated calls on identical graphs are bit-identical.
  void backward(NodeId loss) {
    if (value(loss).size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " + shape_str(value(loss).shape()));
    }
    grad(loss)[0] = T(1);
    for (NodeId i = loss + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.grad_sink) {
        Tensor<T>& sink = *n.grad_sink;
        if (sink.empty()) sink = Tensor<T>(n.grad.shape());
        require_same_shape(sink, n.grad, "parameter gradient");
        T* s = sink.data();
        const T* g = n.grad.data();
        for (std::size_t j = 0; j < sink.size(); ++j) s[j] += g[j];
      }
    }
  }

 private:
  NodeId push(OpTag op, std::vector<NodeId> inputs, Tensor<T> value, bool rg, BackwardFn backward) {
    for (auto i : inputs) {
      if (i >= nodes_.size()) throw ValueError("graph input refers to a node that does not exist yet");
    }
    if (!value.all_finite()) {
      throw TrainingDivergence("non-finite value produced by " + std::string(op_name(op)));
    }
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.requires_grad = rg;
    if (rg) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  std::vector<Node> nodes_;
};

}  // namespace ts
