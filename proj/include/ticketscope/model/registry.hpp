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
#include <string>
#include <vector>

#include "ticketscope/core/tensor.hpp"

namespace ts {

enum class ParamKind { kConv, kDense, kNormAffine, kBias };

inline const char* kind_name(ParamKind k) {
  switch (k) {
    case ParamKind::kConv: return "conv";
    case ParamKind::kDense: return "dense";
    case ParamKind::kNormAffine: return "norm_affine";
    case ParamKind::kBias: return "bias";
  }
  return "?";
}

template <class T>
struct Parameter {
  int layer_id = 0;
  std::string name;
  ParamKind kind = ParamKind::kConv;
  bool prunable = false;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Non-trainable state (normalization running statistics).
template <class T>
struct Buffer {
  int layer_id = 0;
  std::string name;
  Tensor<T> value;
};

/// Ordered parameter table of a model. Order is construction order, which is
/// fixed per architecture, so indices are stable across runs.
template <class T>
class ParamRegistry {
 public:
  std::vector<Parameter<T>>& entries() noexcept { return entries_; }
  const std::vector<Parameter<T>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  Parameter<T>& operator[](std::size_t i) { return entries_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return entries_[i]; }

  std::size_t add(Parameter<T> p) {
    if (find(p.name) != npos) throw ValueError("duplicate parameter name " + p.name);
    entries_.push_back(std::move(p));
    return entries_.size() - 1;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name == name) return i;
    }
    return npos;
  }

  Parameter<T>& at(const std::string& name) {
    const auto i = find(name);
    if (i == npos) throw ValueError("no parameter named " + name);
    return entries_[i];
  }
  const Parameter<T>& at(const std::string& name) const {
    const auto i = find(name);
    if (i == npos) throw ValueError("no parameter named " + name);
    return entries_[i];
  }

  /// Total element count of prunable entries (d).
  std::size_t prunable_count() const {
    std::size_t d = 0;
    for (const auto& p : entries_) {
      if (p.prunable) d += p.value.size();
    }
    return d;
  }

  std::size_t total_count() const {
    std::size_t d = 0;
    for (const auto& p : entries_) d += p.value.size();
    return d;
  }

  void erase_layer(int layer_id) {
    std::erase_if(entries_, [&](const Parameter<T>& p) { return p.layer_id == layer_id; });
  }

 private:
  std::vector<Parameter<T>> entries_;
};

}  // namespace ts
