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
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ticketscope/autograd/sgd.hpp"
#include "ticketscope/data/augment.hpp"
#include "ticketscope/data/dataset.hpp"
#include "ticketscope/pruning/mask.hpp"
#include "ticketscope/tasks/objectives.hpp"

namespace ts {

/// Fixed-budget training schedule.
struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  StepSchedule schedule{0.05, 10.0, {}, 0.0};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  AugmentPolicy augment = AugmentPolicy::standard();

  void validate() const {
    if (batch_size < 2) throw ConfigError("batch_size", "must be at least 2");
    if (!(schedule.base_lr > 0)) throw ConfigError("lr", "must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum", "must be in [0, 1)");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay", "must be non-negative");
    if (!(schedule.decay_factor > 0)) throw ConfigError("decay_factor", "must be positive");
  }
};

/// Snapshot W_k of every parameter and normalization statistic, taken after
/// `samples` training images had been processed.
template <class T>
struct RewindCheckpoint {
  std::size_t samples = 0;
  std::size_t step = 0;
  std::uint64_t seed = 0;
  Model<T> model;
};

/// Asks `train` to capture a RewindCheckpoint the first time the processed
/// sample count reaches `samples`.
template <class T>
struct RewindRequest {
  std::size_t samples = 0;
  std::optional<RewindCheckpoint<T>> captured;
};

struct TrainStats {
  std::size_t steps = 0;
  std::size_t samples = 0;
  double last_epoch_loss = 0.0;
};

struct BatchPlan {
  std::size_t batch = 0;
  std::size_t steps_per_epoch = 0;
  std::size_t total_samples(std::size_t epochs) const { return epochs * steps_per_epoch * batch; }
};

/// Batches drop the incomplete tail of each shuffled epoch.
inline BatchPlan plan_batches(std::size_t n, std::size_t batch_size) {
  if (n < 2) throw ValueError("training set needs at least two images");
  const std::size_t b = std::min(batch_size, n);
  return {b, n / b};
}

/// Optimizer slots for the backbone and the heads `task` trains; other heads
/// are left alone (no weight decay either).
template <class T>
std::vector<ParamSlot<T>> task_slots(Model<T>& model, const Mask* mask, const TaskObjective& task) {
  auto slots = optimizer_slots(model, mask);
  std::vector<bool> skip(model.registry().size(), false);
  const auto wanted = task.heads(model.spec().num_classes);
  for (const auto& h : model.heads()) {
    const bool used = std::any_of(wanted.begin(), wanted.end(), [&](const auto& w) { return w.first == h.name; });
    if (!used) skip[h.weight] = skip[h.bias] = true;
  }
  std::vector<ParamSlot<T>> out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!skip[i]) out.push_back(slots[i]);
  }
  return out;
}

namespace detail {

template <class T>
Tensor<T> augmented_batch(const Dataset& ds, std::span<const std::size_t> idx, const AugmentPolicy& policy, Rng& rng) {
  if (policy.is_identity()) return ds.batch<T>(idx);
  Tensor<T> out({idx.size(), ds.channels, ds.height, ds.width});
  const std::size_t sz = ds.image_size();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto img = augment(ds.image(idx[i]), ds.channels, ds.height, ds.width, policy, rng);
    std::copy(img.begin(), img.end(), out.data() + i * sz);
  }
  return out;
}

}  // namespace detail

/// Builds the task loss for one batch of dataset rows.
template <class T>
NodeId task_loss(Graph<T>& g, Model<T>& model, const TaskObjective& task, const Dataset& ds,
                 std::span<const std::size_t> idx, const AugmentPolicy& policy, Rng& rng) {
  switch (task.kind) {
    case TaskKind::kLabels: {
      const auto x = detail::augmented_batch<T>(ds, idx, policy, rng);
      const auto y = ds.batch_labels(idx);
      for (int l : y) {
        if (l < 0) throw ValueError("labels task given an image with a hidden label");
      }
      return supervised_loss(g, model, x, std::span<const int>(y));
    }
    case TaskKind::kRotnet:
      return rotnet_loss(g, model, detail::augmented_batch<T>(ds, idx, policy, rng), task.rotnet_mode, rng);
    case TaskKind::kExemplar:
      return exemplar_loss(g, model, ds, idx, task.margin, rng);
    case TaskKind::kS4l: {
      std::vector<std::size_t> lab, unl;
      for (auto i : idx) (ds.labels[i] >= 0 ? lab : unl).push_back(i);
      std::optional<Tensor<T>> xl, xu;
      if (!lab.empty()) xl = detail::augmented_batch<T>(ds, lab, policy, rng);
      if (!unl.empty()) xu = detail::augmented_batch<T>(ds, unl, policy, rng);
      const auto y = ds.batch_labels(lab);
      return s4l_loss(g, model, xl ? &*xl : nullptr, std::span<const int>(y), xu ? &*xu : nullptr, task.rotnet_mode,
                      rng);
    }
  }
  throw ValueError("unknown task");
}

/// Trains `model` in place for cfg.epochs epochs with momentum SGD, keeping
/// masked weights at exactly zero. All randomness (epoch order, augmentation,
/// negatives, rotations) derives from `seed`. Optimizer state starts fresh.
template <class T>
TrainStats train(Model<T>& model, const Mask* mask, const Dataset& data, const TaskObjective& task,
                 const TrainConfig& cfg, std::uint64_t seed, std::type_identity_t<RewindRequest<T>>* rewind = nullptr,
                 const std::function<void(std::size_t step, double loss)>& on_step = {}) {
  cfg.validate();
  if (mask) apply_mask_inplace(model, *mask);
  const BatchPlan plan = plan_batches(data.size(), cfg.batch_size);
  if (rewind && !rewind->captured && rewind->samples > plan.total_samples(cfg.epochs)) {
    throw ValueError("rewind point of " + std::to_string(rewind->samples) + " samples lies beyond the run length of " +
                     std::to_string(plan.total_samples(cfg.epochs)) + " samples");
  }

  SgdState<T> opt;
  opt.schedule = cfg.schedule;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;
  opt.steps_per_epoch = plan.steps_per_epoch;
  auto slots = task_slots(model, mask, task);

  const Rng root(seed);
  TrainStats stats;
  auto maybe_capture = [&] {
    if (rewind && !rewind->captured && stats.samples >= rewind->samples) {
      rewind->captured = RewindCheckpoint<T>{stats.samples, stats.steps, seed, model};
    }
  };

  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = root.split("epoch").split(epoch);
    shuffle_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0;
    for (std::size_t s = 0; s < plan.steps_per_epoch; ++s) {
      maybe_capture();
      const std::span<const std::size_t> idx(order.data() + s * plan.batch, plan.batch);
      Rng step_rng = root.split("step").split(stats.steps);
      Graph<T> g;
      model.zero_grad();
      NodeId loss;
      try {
        loss = task_loss(g, model, task, data, idx, cfg.augment, step_rng);
        g.backward(loss);
        sgd_step<T>(opt, slots);
      } catch (TrainingDivergence& e) {
        throw TrainingDivergence(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(stats.steps) + ")",
                                 e.iteration());
      }
      const double l = static_cast<double>(g.value(loss)[0]);
      epoch_loss += l;
      ++stats.steps;
      stats.samples += plan.batch;
      if (on_step) on_step(stats.steps, l);
    }
    stats.last_epoch_loss = epoch_loss / static_cast<double>(plan.steps_per_epoch);
  }
  maybe_capture();
  return stats;
}

}  // namespace ts
