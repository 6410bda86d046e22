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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "ticketscope/data/formats.hpp"
#include "ticketscope/lab/train.hpp"
#include "ticketscope/pruning/mask.hpp"
#include "ticketscope/pruning/sparsity.hpp"

namespace ts {

/// Binary checkpoint layout (all integers little-endian):
///
///   "TCKT" | u32 version | u32 tensor count | tensors...
///   tensor: u32 name length | name bytes | u8 dtype | u8 rank | u64 dims[rank] | payload
///
/// dtype 0 = f32, 1 = u8 mask, 2 = f64. Masks travel as companion tensors
/// named "<param>.mask"; scalars under "meta." are f64 tensors of shape (1).
inline constexpr char kCheckpointMagic[4] = {'T', 'C', 'K', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline const std::string kMaskSuffix = ".mask";
inline const std::string kMetaPrefix = "meta.";

enum class DType : std::uint8_t { kF32 = 0, kU8 = 1, kF64 = 2 };

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF32: return 4;
    case DType::kU8: return 1;
    case DType::kF64: return 8;
  }
  throw FormatError("unknown dtype tag " + std::to_string(static_cast<int>(d)));
}

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::kF32 : DType::kF64;
}

struct CheckpointTensor {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<std::uint8_t> payload;

  std::size_t numel() const { return shape_numel(shape); }

  /// Values converted to T (f32 and f64 payloads only).
  template <class T>
  Tensor<T> as_tensor() const {
    Tensor<T> out(shape);
    if (dtype == DType::kF32) {
      for (std::size_t i = 0; i < out.size(); ++i) {
        float v;
        std::memcpy(&v, payload.data() + 4 * i, 4);
        out[i] = static_cast<T>(v);
      }
    } else if (dtype == DType::kF64) {
      for (std::size_t i = 0; i < out.size(); ++i) {
        double v;
        std::memcpy(&v, payload.data() + 8 * i, 8);
        out[i] = static_cast<T>(v);
      }
    } else {
      throw FormatError("tensor " + name + " is a mask, not a float tensor");
    }
    return out;
  }
};

struct Checkpoint {
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  template <class T>
  void add(const std::string& name, const Tensor<T>& t) {
    CheckpointTensor c{name, dtype_of<T>(), t.shape(), std::vector<std::uint8_t>(t.size() * sizeof(T))};
    std::memcpy(c.payload.data(), t.data(), c.payload.size());
    tensors.push_back(std::move(c));
  }

  void add_mask(const std::string& name, const Shape& shape, const std::vector<std::uint8_t>& bits) {
    tensors.push_back({name, DType::kU8, shape, bits});
  }

  void set_meta(const std::string& key, double v) { add(kMetaPrefix + key, Tensor<double>({1}, v)); }

  std::optional<double> meta(const std::string& key) const {
    const auto* t = find(kMetaPrefix + key);
    if (!t) return std::nullopt;
    return t->as_tensor<double>()[0];
  }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class U>
void put(std::vector<std::uint8_t>& out, U v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  template <class U>
  U get(const std::string& what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  void take(std::uint8_t* dst, std::size_t n, const std::string& what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const std::string& what) const {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedError(origin_ + ": file truncated while reading " + what + " (needed " + std::to_string(n) +
                           " bytes, " + std::to_string(bytes_.size() - pos_) + " left)");
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    if (t.payload.size() != t.numel() * dtype_size(t.dtype)) {
      throw ValueError("checkpoint tensor " + t.name + ": payload does not match shape and dtype");
    }
    if (t.shape.size() > 255) throw ValueError("checkpoint tensor " + t.name + ": rank too large");
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) detail::put<std::uint64_t>(out, d);
    out.insert(out.end(), t.payload.begin(), t.payload.end());
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "checkpoint") {
  detail::Reader r(bytes, origin);
  std::uint8_t magic[4];
  r.take(magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw BadMagicError(origin + ": bad checkpoint magic [" + detail::hex_bytes(magic, 4) + "], expected \"TCKT\"");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionMismatchError(origin + ": checkpoint version " + std::to_string(version) + ", this build reads " +
                               std::to_string(kCheckpointVersion));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto len = r.get<std::uint32_t>("name length of tensor " + std::to_string(i));
    if (len > r.remaining()) throw TruncatedError(origin + ": file truncated in the name of tensor " + std::to_string(i));
    t.name.resize(len);
    r.take(reinterpret_cast<std::uint8_t*>(t.name.data()), len, "name of tensor " + std::to_string(i));
    const auto tag = r.get<std::uint8_t>("dtype of tensor " + t.name);
    if (tag > 2) throw FormatError(origin + ": tensor " + t.name + " has unknown dtype tag " + std::to_string(tag));
    t.dtype = static_cast<DType>(tag);
    const auto rank = r.get<std::uint8_t>("rank of tensor " + t.name);
    for (std::uint8_t k = 0; k < rank; ++k) t.shape.push_back(r.get<std::uint64_t>("dims of tensor " + t.name));
    std::size_t n = 1;
    for (auto d : t.shape) {
      if (d == 0) throw FormatError(origin + ": tensor " + t.name + " has a zero dimension");
      n *= d;
    }
    const std::size_t size = n * dtype_size(t.dtype);
    if (size > r.remaining()) {
      throw TruncatedError(origin + ": file truncated in the payload of tensor " + t.name + " (needed " +
                           std::to_string(size) + " bytes, " + std::to_string(r.remaining()) + " left)");
    }
    t.payload.resize(size);
    r.take(t.payload.data(), size, "payload of tensor " + t.name);
    if (t.dtype == DType::kU8) {
      for (auto b : t.payload) {
        if (b > 1) throw FormatError(origin + ": mask tensor " + t.name + " holds a value other than 0/1");
      }
    }
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError(origin + ": trailing bytes after the last tensor");
  return ck;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path), path.string());
}

/// Every parameter and buffer of `model`, plus a "<param>.mask" tensor for each
/// prunable parameter (all ones without a mask).
template <class T>
Checkpoint make_checkpoint(const Model<T>& model, const Mask* mask) {
  if (mask) mask->check_against(model.registry());
  Checkpoint ck;
  for (const auto& p : model.registry().entries()) {
    ck.add(p.name, p.value);
    if (!p.prunable) continue;
    const Mask::Entry* e = mask ? mask->find(p.name) : nullptr;
    ck.add_mask(p.name + kMaskSuffix, p.value.shape(), e ? e->bits : std::vector<std::uint8_t>(p.value.size(), 1));
  }
  for (const auto& b : model.buffers()) ck.add(b.name, b.value);
  return ck;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const Mask* mask,
                     const std::map<std::string, double>& meta = {}) {
  Checkpoint ck = make_checkpoint(model, mask);
  for (const auto& [k, v] : meta) ck.set_meta(k, v);
  write_checkpoint(path, ck);
}

/// Copies checkpoint values into `model` and returns the stored mask.
/// Heads present in the checkpoint but not in the model are added first.
/// Throws FormatError when a model tensor is missing or has another shape.
template <class T>
Mask restore_checkpoint(const Checkpoint& ck, Model<T>& model) {
  for (const auto& t : ck.tensors) {
    const std::string suffix = ".weight";
    if (t.dtype == DType::kU8 || t.name.size() <= suffix.size() ||
        t.name.compare(t.name.size() - suffix.size(), suffix.size(), suffix) != 0) {
      continue;
    }
    const std::string head = t.name.substr(0, t.name.size() - suffix.size());
    if (model.registry().find(t.name) == ParamRegistry<T>::npos && ck.find(head + ".bias") && t.shape.size() == 2) {
      model.add_head(head, t.shape[0], 0);
    }
  }
  auto load = [&](const std::string& name, Tensor<T>& dst) {
    const CheckpointTensor* t = ck.find(name);
    if (!t) throw FormatError("checkpoint has no tensor " + name);
    if (t->shape != dst.shape()) {
      throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(t->shape) + ", model expects " +
                        shape_str(dst.shape()));
    }
    dst = t->as_tensor<T>();
  };
  for (auto& p : model.registry().entries()) load(p.name, p.value);
  for (auto& b : model.buffers()) load(b.name, b.value);
  Mask mask = Mask::full(model.registry());
  for (auto& e : mask.entries) {
    if (const auto* t = ck.find(e.name + kMaskSuffix)) {
      if (t->dtype != DType::kU8 || t->shape != e.shape) throw FormatError("mask tensor " + t->name + " malformed");
      e.bits = t->payload;
    }
  }
  return mask;
}

/// Registry view of a checkpoint without a model: every float tensor outside
/// "meta." becomes an entry; those with a companion mask are prunable and
/// numbered 1, 2, ... as layer ids, in file order.
template <class T>
std::pair<ParamRegistry<T>, Mask> load_checkpoint(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  ParamRegistry<T> reg;
  int layer = 0;
  for (const auto& t : ck.tensors) {
    if (t.dtype == DType::kU8 || t.name.rfind(kMetaPrefix, 0) == 0) continue;
    const bool prunable = ck.find(t.name + kMaskSuffix) != nullptr;
    reg.add({prunable ? ++layer : 0, t.name, prunable ? ParamKind::kConv : ParamKind::kDense, prunable,
             t.as_tensor<T>(), {}});
  }
  Mask mask = Mask::full(reg);
  for (auto& e : mask.entries) e.bits = ck.find(e.name + kMaskSuffix)->payload;
  return {std::move(reg), std::move(mask)};
}

/// Natural sparsity of the prunable tensors stored in a checkpoint file.
inline SparsityReport sparsity_report(const std::filesystem::path& path, double epsilon = kDefaultSparsityEpsilon) {
  return natural_sparsity(load_checkpoint<double>(path).first, epsilon);
}

template <class T>
void save_rewind(const std::filesystem::path& path, const RewindCheckpoint<T>& ck) {
  save_checkpoint(path, ck.model, nullptr,
                  {{"samples", static_cast<double>(ck.samples)}, {"step", static_cast<double>(ck.step)}});
}

template <class T>
RewindCheckpoint<T> load_rewind(const std::filesystem::path& path, Model<T> model) {
  const Checkpoint ck = read_checkpoint(path);
  restore_checkpoint(ck, model);
  RewindCheckpoint<T> r;
  r.samples = static_cast<std::size_t>(ck.meta("samples").value_or(0));
  r.step = static_cast<std::size_t>(ck.meta("step").value_or(0));
  r.model = std::move(model);
  return r;
}

}  // namespace ts
