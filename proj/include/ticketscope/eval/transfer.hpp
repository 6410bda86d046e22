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
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "ticketscope/eval/evaluate.hpp"
#include "ticketscope/lab/imp.hpp"

namespace ts {

/// Linear classifier on frozen eval-mode features.
struct ProbeConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  StepSchedule schedule{0.05, 10.0, {20, 26}, 0.0};
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double top1 = 0.0;
  double train_top1 = 0.0;
};

namespace detail {

template <class T>
Tensor<T> all_features(const Model<T>& model, const Dataset& ds, std::size_t batch = 250) {
  Tensor<T> out({ds.size(), model.feature_width()});
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < ds.size(); b += batch) {
    idx.resize(std::min(batch, ds.size() - b));
    std::iota(idx.begin(), idx.end(), b);
    const auto f = model.extract_features(ds.batch<T>(idx));
    std::copy(f.data(), f.data() + f.size(), out.data() + b * model.feature_width());
  }
  return out;
}

template <class T>
Tensor<T> rows(const Tensor<T>& x, std::span<const std::size_t> idx) {
  const std::size_t w = x.dim(1);
  Tensor<T> out({idx.size(), w});
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(x.data() + idx[i] * w, w, out.data() + i * w);
  return out;
}

template <class T>
Tensor<T> linear_logits(const Tensor<T>& feats, const Tensor<T>& w, const Tensor<T>& b) {
  Graph<T> g;
  return g.value(ops::linear(g, g.constant(feats), g.constant(w), g.constant(b)));
}

}  // namespace detail

/// Trains a fresh linear head on the frozen backbone's features of `train`
/// and reports top-1 on `test`. The model is only read.
template <class T>
ProbeResult linear_probe(const Model<T>& backbone, const Dataset& train_set, const Dataset& test,
                         const ProbeConfig& cfg) {
  if (train_set.class_count == 0 || train_set.class_count != test.class_count) {
    throw ValueError("linear_probe: train and test class counts differ");
  }
  const Tensor<T> ftr = detail::all_features(backbone, train_set);
  const Tensor<T> fte = detail::all_features(backbone, test);
  const std::size_t classes = train_set.class_count, width = backbone.feature_width();
  const Rng root(cfg.seed);
  Tensor<T> w = he_init<T>({classes, width}, root.split("probe.weight").next_u64());
  Tensor<T> b({classes});
  Tensor<T> gw, gb;

  SgdState<T> opt;
  opt.schedule = cfg.schedule;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;
  const std::size_t bs = std::min(cfg.batch_size, train_set.size());
  opt.steps_per_epoch = std::max<std::size_t>(train_set.size() / bs, 1);
  const std::vector<ParamSlot<T>> slots{{&w, &gw, nullptr}, {&b, &gb, nullptr}};

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = root.split("epoch").split(epoch);
    shuffle_rng.shuffle(order.begin(), order.end());
    for (std::size_t s = 0; s < opt.steps_per_epoch; ++s) {
      const std::span<const std::size_t> idx(order.data() + s * bs, bs);
      const auto y = train_set.batch_labels(idx);
      Graph<T> g;
      gw = {};
      gb = {};
      const NodeId logits = ops::linear(g, g.constant(detail::rows(ftr, idx)), g.param(w, &gw), g.param(b, &gb));
      g.backward(ops::softmax_cross_entropy(g, logits, std::span<const int>(y)));
      sgd_step<T>(opt, slots);
    }
  }
  ProbeResult r;
  r.top1 = accuracy_from_logits(detail::linear_logits(fte, w, b), test.labels).top1;
  r.train_top1 = accuracy_from_logits(detail::linear_logits(ftr, w, b), train_set.labels).top1;
  return r;
}

template <class T>
ProbeResult linear_probe(const Subnetwork<T>& pretrained, const Dataset& train_set, const Dataset& test,
                         const ProbeConfig& cfg) {
  return linear_probe(pretrained.model, train_set, test, cfg);
}

/// Gives the model a fresh label head with `classes` outputs.
template <class T>
void reset_label_head(Model<T>& model, std::size_t classes, std::uint64_t seed) {
  if (model.has_head(kLabelHead)) {
    model.replace_head(model.head_index(kLabelHead), classes, seed);
  } else {
    model.add_head(kLabelHead, classes, seed);
  }
}

/// Mode A: the pretrained subnetwork keeps its mask; every unmasked weight is
/// trained on the target labels under a fresh label head.
/// The finetuned subnetwork is stored in `tuned` when given.
template <class T>
RetrainResult finetune(const Subnetwork<T>& pretrained, const Dataset& train_set, const Dataset& test,
                       const TrainConfig& cfg, std::uint64_t seed, Subnetwork<T>* tuned = nullptr) {
  Subnetwork<T> sub = pretrained;
  reset_label_head(sub.model, train_set.class_count, Rng(seed).split("head").next_u64());
  const RetrainResult r = retrain(sub, train_set, test, cfg, seed);
  if (tuned) *tuned = std::move(sub);
  return r;
}

struct TransferPoint {
  int iteration = 0;
  double remaining_fraction = 1.0;
  double top1 = 0.0;
};

/// Mode B: IMP on the target labels starting from the unpruned pretrained
/// weights (with a fresh label head). `imp.task` is forced to labels; an
/// unset rewind point means reset to the pretrained weights (k = 0).
template <class T>
std::vector<TransferPoint> finetune_prune_during_transfer(const Model<T>& pretrained, const Dataset& train_set,
                                                          const Dataset& test, ImpConfig imp) {
  Model<T> model = pretrained;
  reset_label_head(model, train_set.class_count, Rng(imp.seed).split("head").next_u64());
  imp.task = TaskObjective{};
  if (!imp.rewind_samples) imp.rewind_samples = 0;
  std::vector<TransferPoint> out;
  imp_run<T>(std::move(model), train_set, &test, imp, [&](const ImpIteration<T>& it, const RewindCheckpoint<T>&) {
    out.push_back({it.iteration, it.remaining_fraction, it.metrics.at("top1")});
  });
  return out;
}

}  // namespace ts
