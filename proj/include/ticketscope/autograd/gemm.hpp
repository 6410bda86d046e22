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

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Core>

#include <cstddef>

namespace ts::detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C[m x n] (+)= op(A) * op(B) with row-major storage. op(A) is m x k.
/// Single-threaded, so results are reproducible run to run.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  using Map = Eigen::Map<RowMat<T>>;
  using CMap = Eigen::Map<const RowMat<T>>;
  Map cm(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  const auto em = static_cast<Eigen::Index>(m);
  const auto en = static_cast<Eigen::Index>(n);
  const auto ek = static_cast<Eigen::Index>(k);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      cm.noalias() += lhs * rhs;
    } else {
      cm.noalias() = lhs * rhs;
    }
  };
  if (!trans_a && !trans_b) {
    run(CMap(a, em, ek), CMap(b, ek, en));
  } else if (!trans_a && trans_b) {
    run(CMap(a, em, ek), CMap(b, en, ek).transpose());
  } else if (trans_a && !trans_b) {
    run(CMap(a, ek, em).transpose(), CMap(b, ek, en));
  } else {
    run(CMap(a, ek, em).transpose(), CMap(b, en, ek).transpose());
  }
}

}  // namespace ts::detail
