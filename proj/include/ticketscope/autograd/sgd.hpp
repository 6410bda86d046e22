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
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ticketscope/core/tensor.hpp"

namespace ts {

/// Step-decay learning rate with optional linear warmup.
///
/// The rate is `base_lr` divided by `decay_factor` once for every entry of
/// `decay_epochs` already passed; during the first `warmup_epochs` it ramps
/// linearly up to `base_lr`.
struct StepSchedule {
  double base_lr = 0.1;
  double decay_factor = 10.0;
  std::vector<double> decay_epochs;
  double warmup_epochs = 0.0;

  double lr_at(double epoch) const {
    double lr = base_lr;
    for (double e : decay_epochs) {
      if (epoch >= e) lr /= decay_factor;
    }
    if (warmup_epochs > 0 && epoch < warmup_epochs) lr *= std::max(epoch, 0.0) / warmup_epochs;
    return lr;
  }
};

/// One trainable tensor as seen by the optimizer. `mask`, when set, marks the
/// frozen entries (0) that must stay exactly zero.
template <class T>
struct ParamSlot {
  Tensor<T>* value = nullptr;
  const Tensor<T>* grad = nullptr;
  const std::vector<std::uint8_t>* mask = nullptr;
};

/// SGD with heavy-ball momentum and coupled L2 weight decay.
template <class T>
struct SgdState {
  StepSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t steps_per_epoch = 1;
  std::size_t step_count = 0;
  std::vector<Tensor<T>> velocity;

  double epoch_position() const {
    return static_cast<double>(step_count + 1) / static_cast<double>(std::max<std::size_t>(steps_per_epoch, 1));
  }
  double learning_rate() const { return schedule.lr_at(epoch_position()); }

  void reset() {
    velocity.clear();
    step_count = 0;
  }
};

/// v <- momentum * v + g + weight_decay * w ; w <- w - lr * v.
///
/// Masked entries get zero velocity and zero weight, so a pruned weight can
/// never come back. Throws TrainingDivergence if any parameter leaves the
/// finite range.
template <class T>
void sgd_step(SgdState<T>& state, std::span<const ParamSlot<T>> params) {
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto& p : params) state.velocity.emplace_back(p.value->shape());
  }
  const T lr = static_cast<T>(state.learning_rate());
  const T mom = static_cast<T>(state.momentum);
  const T wd = static_cast<T>(state.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& w = *params[i].value;
    Tensor<T>& v = state.velocity[i];
    require_same_shape(w, v, "sgd velocity");
    const Tensor<T>* g = params[i].grad;
    if (g && !g->empty()) require_same_shape(w, *g, "sgd gradient");
    const std::uint8_t* m = params[i].mask ? params[i].mask->data() : nullptr;
    if (m && params[i].mask->size() != w.size()) throw ShapeError("sgd: mask size mismatch");
    bool finite = true;
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (m && !m[j]) {
        v[j] = T(0);
        w[j] = T(0);
        continue;
      }
      const T gj = (g && !g->empty()) ? (*g)[j] : T(0);
      v[j] = mom * v[j] + gj + wd * w[j];
      w[j] = w[j] - lr * v[j];
      finite = finite && std::isfinite(w[j]);
    }
    if (!finite) {
      throw TrainingDivergence("non-finite parameter after optimizer step " + std::to_string(state.step_count));
    }
  }
  ++state.step_count;
}

}  // namespace ts
