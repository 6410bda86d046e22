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
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "ticketscope/eval/evaluate.hpp"
#include "ticketscope/lab/train.hpp"
#include "ticketscope/pruning/prune.hpp"

namespace ts {

/// Iterative magnitude pruning schedule.
struct ImpConfig {
  double rate = 0.2;
  int max_iterations = 30;
  /// Samples processed before W_k is captured; unset means 3 epochs of the
  /// training set.
  std::optional<std::size_t> rewind_samples;
  std::vector<int> report_iterations = default_report_iterations();
  /// Restricts pruning to layers with layer_id <= depth_limit.
  std::optional<int> depth_limit;
  TaskObjective task;
  TrainConfig train;
  std::uint64_t seed = 0;

  static std::vector<int> default_report_iterations() { return {1, 2, 3, 4, 5, 7, 9, 11, 14, 17, 20, 23, 26, 30}; }

  void validate() const {
    if (!(rate > 0 && rate < 1)) throw ConfigError("imp.rate", "must be in (0, 1)");
    if (max_iterations < 0) throw ConfigError("imp.max_iterations", "must be non-negative");
    if (!std::is_sorted(report_iterations.begin(), report_iterations.end()) ||
        std::adjacent_find(report_iterations.begin(), report_iterations.end()) != report_iterations.end()) {
      throw ConfigError("imp.report_iterations", "must be strictly increasing");
    }
    for (int t : report_iterations) {
      if (t < 1 || t > max_iterations) {
        throw ConfigError("imp.report_iterations",
                          "iteration " + std::to_string(t) + " outside [1, " + std::to_string(max_iterations) + "]");
      }
    }
    if (depth_limit && *depth_limit < 1) throw ConfigError("imp.depth_limit", "must be >= 1");
    train.validate();
  }

  std::size_t resolved_rewind(std::size_t train_size) const { return rewind_samples.value_or(3 * train_size); }

  bool reports(int t) const { return std::binary_search(report_iterations.begin(), report_iterations.end(), t); }

  /// Seed of the training run of round t (0 = dense run).
  std::uint64_t round_seed(int t) const { return Rng(seed).split("imp").split(static_cast<std::uint64_t>(t)).next_u64(); }
};

/// Remaining fraction after t rounds at `rate` on d weights.
inline double remaining_fraction_after(std::size_t d, double rate, int t) {
  std::size_t r = d;
  for (int i = 0; i < t; ++i) r = remaining_after(r, rate);
  return static_cast<double>(r) / static_cast<double>(d);
}

/// Held-out metrics appropriate to the task: label top-1 and/or rotation
/// top-1, plus the mean loss of the last training epoch.
template <class T>
std::map<std::string, double> task_metrics(const Model<T>& model, const TaskObjective& task, const Dataset* test,
                                           double train_loss) {
  std::map<std::string, double> m{{"train_loss", train_loss}};
  if (!test) return m;
  if (task.kind == TaskKind::kLabels || task.kind == TaskKind::kS4l) m["top1"] = evaluate(model, *test).top1;
  if (task.kind == TaskKind::kRotnet || task.kind == TaskKind::kS4l) {
    m["rotation_top1"] = rotation_accuracy(model, *test).top1;
  }
  return m;
}

/// One IMP round: the subnetwork with mask m_t after training (W*_t).
template <class T>
struct ImpIteration {
  int iteration = 0;
  Mask mask;
  double remaining_fraction = 1.0;
  std::size_t pruned = 0;
  Model<T> trained;
  std::map<std::string, double> metrics;
};

/// State needed to continue a run after round `iteration`.
template <class T>
struct ImpResume {
  int iteration = 0;
  Model<T> trained;
  Mask mask;
  RewindCheckpoint<T> rewind;
};

template <class T>
struct ImpResult {
  RewindCheckpoint<T> rewind;
  std::vector<ImpIteration<T>> iterations;  // rounds run in this call, in order
};

/// Iterative magnitude pruning with late resetting.
///
/// Round 0 trains the dense model and captures W_k. Round t >= 1 prunes
/// cfg.rate of the remaining weights of W*_{t-1} (mask m_t), resets to W_k
/// with masked entries at 0, and trains again with a fresh optimizer.
/// `on_round` sees every round; only rounds in report_iterations (and
/// round 0) keep their trained model in the result.
template <class T>
ImpResult<T> imp_run(Model<T> model, const Dataset& train_set, const Dataset* test, const ImpConfig& cfg,
                     const std::type_identity_t<std::function<void(const ImpIteration<T>&, const RewindCheckpoint<T>&)>>&
                         on_round = {},
                     std::type_identity_t<std::optional<ImpResume<T>>> resume = std::nullopt) {
  cfg.validate();
  ImpResult<T> out;
  attach_heads(model, cfg.task, Rng(cfg.seed).split("heads").next_u64());

  auto finish_round = [&](int t, const Mask& mask, std::size_t pruned, Model<T>&& trained, double loss) {
    ImpIteration<T> it;
    it.iteration = t;
    it.mask = mask;
    it.remaining_fraction = mask.remaining_fraction();
    it.pruned = pruned;
    it.metrics = task_metrics(trained, cfg.task, test, loss);
    it.trained = std::move(trained);
    if (on_round) on_round(it, out.rewind);
    if (t != 0 && !cfg.reports(t)) it.trained = Model<T>{};
    out.iterations.push_back(std::move(it));
  };

  int start;
  Mask mask;
  if (resume) {
    out.rewind = std::move(resume->rewind);
    model = std::move(resume->trained);
    mask = std::move(resume->mask);
    start = resume->iteration + 1;
  } else {
    mask = Mask::full(model.registry());
    RewindRequest<T> req{cfg.resolved_rewind(train_set.size()), std::nullopt};
    TrainStats stats;
    try {
      stats = train(model, &mask, train_set, cfg.task, cfg.train, cfg.round_seed(0), &req);
    } catch (TrainingDivergence& e) {
      e.set_iteration(0);
      throw;
    }
    out.rewind = std::move(*req.captured);
    finish_round(0, mask, 0, Model<T>(model), stats.last_epoch_loss);
    start = 1;
  }

  for (int t = start; t <= cfg.max_iterations; ++t) {
    const PruneResult pr = cfg.depth_limit ? layerwise_prune(model.registry(), mask, cfg.rate, *cfg.depth_limit)
                                           : global_magnitude_prune(model.registry(), mask, cfg.rate);
    mask = pr.mask;
    model = out.rewind.model;
    apply_mask_inplace(model, mask);
    TrainStats stats;
    try {
      stats = train(model, &mask, train_set, cfg.task, cfg.train, cfg.round_seed(t));
    } catch (TrainingDivergence& e) {
      e.set_iteration(t);
      throw;
    }
    finish_round(t, mask, pr.pruned, Model<T>(model), stats.last_epoch_loss);
  }
  return out;
}

/// Winning ticket: mask applied to the rewind checkpoint W_k (parameters and
/// normalization statistics).
template <class T>
Subnetwork<T> extract_ticket(const Mask& mask, const RewindCheckpoint<T>& ckpt) {
  return apply_mask(ckpt.model, mask);
}

/// Fresh he_init draw of every parameter of `spec`, then `mask` applied.
template <class T>
Subnetwork<T> random_reinit(const Mask& mask, const ArchSpec& spec, std::uint64_t seed) {
  return apply_mask(build_model<T>(spec, seed), mask);
}

struct RetrainResult {
  double top1 = 0.0;
  double train_loss = 0.0;
};

/// Trains a subnetwork on label classification with its mask frozen and
/// reports held-out top-1. The label head is added if missing.
template <class T>
RetrainResult retrain(Subnetwork<T>& sub, const Dataset& train_set, const Dataset& test, const TrainConfig& cfg,
                      std::uint64_t seed) {
  TaskObjective labels;
  attach_heads(sub.model, labels, Rng(seed).split("heads").next_u64());
  RetrainResult r;
  r.train_loss = train(sub.model, &sub.mask, train_set, labels, cfg, seed).last_epoch_loss;
  r.top1 = evaluate(sub.model, test).top1;
  return r;
}

}  // namespace ts
