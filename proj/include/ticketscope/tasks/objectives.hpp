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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ticketscope/autograd/ops.hpp"
#include "ticketscope/data/augment.hpp"
#include "ticketscope/data/dataset.hpp"
#include "ticketscope/data/subset.hpp"
#include "ticketscope/model/model.hpp"
#include "ticketscope/tasks/rotation.hpp"

namespace ts {

enum class TaskKind { kLabels, kRotnet, kExemplar, kS4l };

inline const char* task_name(TaskKind k) {
  switch (k) {
    case TaskKind::kLabels: return "labels";
    case TaskKind::kRotnet: return "rotnet";
    case TaskKind::kExemplar: return "exemplar";
    case TaskKind::kS4l: return "s4l";
  }
  return "?";
}

inline TaskKind parse_task(const std::string& s) {
  if (s == "labels") return TaskKind::kLabels;
  if (s == "rotnet") return TaskKind::kRotnet;
  if (s == "exemplar") return TaskKind::kExemplar;
  if (s == "s4l") return TaskKind::kS4l;
  throw ValueError("unknown task '" + s + "' (expected labels, rotnet, exemplar or s4l)");
}

inline const std::string kLabelHead = "classifier";
inline const std::string kRotationHead = "rotation";
inline const std::string kEmbeddingHead = "embedding";

/// A training objective and its knobs.
struct TaskObjective {
  TaskKind kind = TaskKind::kLabels;
  double margin = 0.5;                  // exemplar
  std::size_t embedding_dim = 64;       // exemplar
  RotnetMode rotnet_mode = RotnetMode::kAllFour;
  double labeled_fraction = 0.1;        // s4l
  SubsetMode subset_mode = SubsetMode::kPerClass;  // s4l

  /// Heads the objective trains, with their widths.
  std::vector<std::pair<std::string, std::size_t>> heads(std::size_t class_count) const {
    switch (kind) {
      case TaskKind::kLabels: return {{kLabelHead, class_count}};
      case TaskKind::kRotnet: return {{kRotationHead, kRotationCount}};
      case TaskKind::kExemplar: return {{kEmbeddingHead, embedding_dim}};
      case TaskKind::kS4l: return {{kLabelHead, class_count}, {kRotationHead, kRotationCount}};
    }
    return {};
  }

  std::size_t head_width(std::size_t class_count) const { return heads(class_count).back().second; }
};

/// Adds any head the task needs that the model does not have yet. Existing
/// heads are kept as they are, whatever their width.
template <class T>
void attach_heads(Model<T>& model, const TaskObjective& task, std::uint64_t seed) {
  for (const auto& [name, width] : task.heads(model.spec().num_classes)) {
    if (!model.has_head(name)) model.add_head(name, width, Rng(seed).split(name).next_u64());
  }
}

/// Cross-entropy of the label head on a labeled batch.
template <class T>
NodeId supervised_loss(Graph<T>& g, Model<T>& model, const Tensor<T>& images, std::span<const int> labels,
                       ops::Mode mode = ops::Mode::kTrain) {
  const NodeId logits = model.head(g, model.features(g, g.constant(images), mode), model.head_index(kLabelHead));
  return ops::softmax_cross_entropy(g, logits, labels);
}

/// Rotation-prediction cross-entropy over rotnet_batch(images).
template <class T>
NodeId rotnet_loss(Graph<T>& g, Model<T>& model, const Tensor<T>& images, RotnetMode rmode, Rng& rng,
                   ops::Mode mode = ops::Mode::kTrain) {
  auto [rotated, labels] = rotnet_batch(images, rmode, rng);
  const NodeId logits = model.head(g, model.features(g, g.constant(rotated), mode), model.head_index(kRotationHead));
  return ops::softmax_cross_entropy(g, logits, std::span<const int>(labels));
}

/// For each row, a uniformly drawn row with a different instance id.
inline std::vector<std::size_t> sample_negatives(std::span<const std::size_t> ids, Rng& rng) {
  const std::size_t n = ids.size();
  std::vector<std::size_t> neg(n);
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < n; ++i) {
    others.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (ids[j] != ids[i]) others.push_back(j);
    }
    if (others.empty()) throw ValueError("exemplar_loss: batch needs at least two distinct instances");
    neg[i] = others[rng.below(others.size())];
  }
  return neg;
}

/// Triplet loss over embedding rows: anchors[i], positives[i] and
/// positives[negatives[i]].
template <class T>
NodeId exemplar_triplet(Graph<T>& g, NodeId anchors, NodeId positives, std::vector<std::size_t> negatives,
                        double margin) {
  const NodeId neg = ops::gather_rows(g, positives, std::move(negatives));
  return ops::triplet_margin_loss(g, anchors, positives, neg, margin);
}

/// Exemplar instance discrimination: two exemplar-augmented views of every
/// image, L2-normalized embeddings, one in-batch negative per anchor.
template <class T>
NodeId exemplar_loss(Graph<T>& g, Model<T>& model, const Dataset& ds, std::span<const std::size_t> instance_ids,
                     double margin, Rng& rng, ops::Mode mode = ops::Mode::kTrain) {
  const std::size_t n = instance_ids.size();
  if (n < 2) throw ValueError("exemplar_loss: batch needs at least two distinct instances");
  const std::size_t sz = ds.image_size();
  Tensor<T> views({2 * n, ds.channels, ds.height, ds.width});
  const auto policy = AugmentPolicy::exemplar();
  for (std::size_t v = 0; v < 2; ++v) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto img = augment(ds.image(instance_ids[i]), ds.channels, ds.height, ds.width, policy, rng);
      std::copy(img.begin(), img.end(), views.data() + (v * n + i) * sz);
    }
  }
  const auto negatives = sample_negatives(instance_ids, rng);
  const NodeId emb = ops::l2_normalize(
      g, model.head(g, model.features(g, g.constant(views), mode), model.head_index(kEmbeddingHead)));
  return exemplar_triplet(g, ops::slice_rows(g, emb, 0, n), ops::slice_rows(g, emb, n, 2 * n), negatives, margin);
}

/// Label cross-entropy on the labeled images plus rotation cross-entropy on
/// labeled and unlabeled images together. Either part may be empty.
template <class T>
NodeId s4l_loss(Graph<T>& g, Model<T>& model, const Tensor<T>* labeled, std::span<const int> labels,
                const Tensor<T>* unlabeled, RotnetMode rmode, Rng& rng, ops::Mode mode = ops::Mode::kTrain) {
  const std::size_t nl = labeled ? labeled->dim(0) : 0;
  const std::size_t nu = unlabeled ? unlabeled->dim(0) : 0;
  if (nl + nu == 0) throw ValueError("s4l_loss: empty batch");
  const Tensor<T>& ref = nl ? *labeled : *unlabeled;
  Tensor<T> all({nl + nu, ref.dim(1), ref.dim(2), ref.dim(3)});
  if (nl) std::copy(labeled->data(), labeled->data() + labeled->size(), all.data());
  if (nu) std::copy(unlabeled->data(), unlabeled->data() + unlabeled->size(), all.data() + (nl ? labeled->size() : 0));
  const NodeId rot = rotnet_loss(g, model, all, rmode, rng, mode);
  if (!nl) return rot;
  return ops::add(g, supervised_loss(g, model, *labeled, labels, mode), rot);
}

}  // namespace ts
