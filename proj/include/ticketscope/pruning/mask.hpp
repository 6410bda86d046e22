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
#include <string>
#include <vector>

#include "ticketscope/model/model.hpp"

namespace ts {

/// Binary keep-mask over the prunable tensors of a registry (1 = active).
///
/// Entries follow registry order and carry the (layer_id, name) key of the
/// parameter they cover. Protected parameters never have an entry.
struct Mask {
  struct Entry {
    int layer_id = 0;
    std::string name;
    Shape shape;
    std::vector<std::uint8_t> bits;
  };

  std::vector<Entry> entries;

  template <class T>
  static Mask full(const ParamRegistry<T>& registry) {
    Mask m;
    for (const auto& p : registry.entries()) {
      if (!p.prunable) continue;
      m.entries.push_back({p.layer_id, p.name, p.value.shape(), std::vector<std::uint8_t>(p.value.size(), 1)});
    }
    return m;
  }

  /// d: number of prunable entries covered.
  std::size_t total() const {
    std::size_t d = 0;
    for (const auto& e : entries) d += e.bits.size();
    return d;
  }

  /// r: number of active (1) entries.
  std::size_t remaining() const {
    std::size_t r = 0;
    for (const auto& e : entries) {
      for (auto b : e.bits) r += b;
    }
    return r;
  }

  double remaining_fraction() const {
    const auto d = total();
    return d ? static_cast<double>(remaining()) / static_cast<double>(d) : 1.0;
  }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  /// Throws ValueError unless keys and shapes match the registry's prunable
  /// entries exactly and every bit is 0 or 1.
  template <class T>
  void check_against(const ParamRegistry<T>& registry) const {
    std::size_t k = 0;
    for (const auto& p : registry.entries()) {
      if (!p.prunable) {
        if (find(p.name)) throw ValueError("mask covers protected parameter " + p.name);
        continue;
      }
      if (k >= entries.size()) throw ValueError("mask has no entry for prunable parameter " + p.name);
      const Entry& e = entries[k++];
      if (e.name != p.name || e.layer_id != p.layer_id) {
        throw ValueError("mask entry " + e.name + " does not match registry parameter " + p.name);
      }
      if (e.shape != p.value.shape() || e.bits.size() != p.value.size()) {
        throw ValueError("mask entry " + e.name + " has shape " + shape_str(e.shape) + ", parameter has " +
                         shape_str(p.value.shape()));
      }
      for (auto b : e.bits) {
        if (b > 1) throw ValueError("mask entry " + e.name + " holds a value other than 0/1");
      }
    }
    if (k != entries.size()) throw ValueError("mask has entries for parameters not in the registry");
  }

  /// True if every active bit of *this is also active in `outer` (this ⊆ outer).
  bool nested_in(const Mask& outer) const {
    if (outer.entries.size() != entries.size()) return false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].bits.size() != outer.entries[i].bits.size()) return false;
      for (std::size_t j = 0; j < entries[i].bits.size(); ++j) {
        if (entries[i].bits[j] > outer.entries[i].bits[j]) return false;
      }
    }
    return true;
  }

  friend bool operator==(const Mask& a, const Mask& b) {
    if (a.entries.size() != b.entries.size()) return false;
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
      const auto& x = a.entries[i];
      const auto& y = b.entries[i];
      if (x.layer_id != y.layer_id || x.name != y.name || x.shape != y.shape || x.bits != y.bits) return false;
    }
    return true;
  }
};

/// A model paired with the mask that freezes part of its prunable weights.
template <class T>
struct Subnetwork {
  Model<T> model;
  Mask mask;
};

/// Zeroes every masked weight of `model` in place.
template <class T>
void apply_mask_inplace(Model<T>& model, const Mask& mask) {
  mask.check_against(model.registry());
  for (const auto& e : mask.entries) {
    auto& w = model.registry().at(e.name).value;
    for (std::size_t j = 0; j < e.bits.size(); ++j) {
      if (!e.bits[j]) w[j] = T(0);
    }
  }
}

/// Binds `mask` to `model`: masked weights become exactly 0, and training
/// through `optimizer_slots` keeps them there.
template <class T>
Subnetwork<T> apply_mask(Model<T> model, Mask mask) {
  apply_mask_inplace(model, mask);
  return Subnetwork<T>{std::move(model), std::move(mask)};
}

/// Optimizer view of a model's parameters, with mask bits attached to the
/// prunable ones when `mask` is given.
template <class T>
std::vector<ParamSlot<T>> optimizer_slots(Model<T>& model, const Mask* mask) {
  std::vector<ParamSlot<T>> slots;
  for (auto& p : model.registry().entries()) {
    ParamSlot<T> s{&p.value, &p.grad, nullptr};
    if (mask && p.prunable) {
      const Mask::Entry* e = mask->find(p.name);
      if (!e) throw ValueError("mask has no entry for " + p.name);
      s.mask = &e->bits;
    }
    slots.push_back(s);
  }
  return slots;
}

}  // namespace ts
