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

// Readers and writers for the IDX (MNIST-style) and CIFAR-10 binary formats.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ticketscope/data/dataset.hpp"

namespace ts {

inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxImage4Magic = 0x00000804;  // N x C x H x W colour images
inline constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

inline std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

inline void push_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline std::string hex_bytes(const std::uint8_t* p, std::size_t n) {
  std::string s;
  char buf[4];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", p[i]);
    s += (i ? " " : "");
    s += buf;
  }
  return s;
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace detail

/// Decoded unsigned-byte IDX array.
struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

/// Parses an unsigned-byte IDX file: 2 zero bytes, type 0x08, rank byte,
/// big-endian 32-bit dims, payload.
inline IdxArray read_idx(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() < 4) throw TruncatedError(path.string() + ": IDX header truncated");
  const std::uint32_t magic = detail::read_be32(bytes.data());
  if (magic != kIdxLabelMagic && magic != kIdxImageMagic && magic != kIdxImage4Magic) {
    throw BadMagicError(path.string() + ": bad IDX magic bytes [" + detail::hex_bytes(bytes.data(), 4) +
                        "], expected 00 00 08 01, 00 00 08 03 or 00 00 08 04");
  }
  IdxArray arr;
  arr.magic = magic;
  const std::size_t rank = bytes[3];
  if (bytes.size() < 4 + 4 * rank) throw TruncatedError(path.string() + ": IDX dimension table truncated");
  std::size_t total = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    arr.dims.push_back(detail::read_be32(bytes.data() + 4 + 4 * i));
    total *= arr.dims.back();
  }
  const std::size_t offset = 4 + 4 * rank;
  if (bytes.size() < offset + total) {
    throw TruncatedError(path.string() + ": IDX payload truncated, expected " + std::to_string(total) +
                         " bytes, found " + std::to_string(bytes.size() - offset));
  }
  arr.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                  bytes.begin() + static_cast<std::ptrdiff_t>(offset + total));
  return arr;
}

/// Loads an image IDX file (N x H x W grey, or N x C x H x W) and its label
/// IDX file. `class_count` 0 means max label + 1. Pixels are byte / 255.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::size_t class_count = 0) {
  const IdxArray img = read_idx(images_path);
  const IdxArray lab = read_idx(labels_path);
  if (img.magic == kIdxLabelMagic) {
    throw BadMagicError(images_path.string() + ": expected an image IDX file (00 00 08 03), found label magic");
  }
  if (lab.magic != kIdxLabelMagic) {
    const std::uint8_t m[4] = {static_cast<std::uint8_t>(lab.magic >> 24), static_cast<std::uint8_t>(lab.magic >> 16),
                               static_cast<std::uint8_t>(lab.magic >> 8), static_cast<std::uint8_t>(lab.magic)};
    throw BadMagicError(labels_path.string() + ": expected a label IDX file (00 00 08 01), found magic bytes [" +
                        detail::hex_bytes(m, 4) + "]");
  }
  Dataset ds;
  if (img.dims.size() == 3) {
    ds.channels = 1;
    ds.height = img.dims[1];
    ds.width = img.dims[2];
  } else if (img.dims.size() == 4) {
    ds.channels = img.dims[1];
    ds.height = img.dims[2];
    ds.width = img.dims[3];
  } else {
    throw FormatError(images_path.string() + ": image IDX must have rank 3 or 4");
  }
  const std::size_t n = img.dims[0];
  if (lab.dims.size() != 1 || lab.dims[0] != n) {
    throw FormatError(labels_path.string() + ": label count does not match image count");
  }
  std::size_t max_label = 0;
  for (auto b : lab.data) max_label = std::max<std::size_t>(max_label, b);
  ds.class_count = class_count ? class_count : max_label + 1;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (lab.data[i] >= ds.class_count) {
      throw FormatError(labels_path.string() + ": label " + std::to_string(lab.data[i]) + " at index " +
                        std::to_string(i) + " is out of range for " + std::to_string(ds.class_count) + " classes");
    }
    ds.labels[i] = lab.data[i];
  }
  ds.pixels.resize(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) ds.pixels[i] = static_cast<float>(img.data[i]) / 255.0f;
  return ds;
}

/// Writes images as IDX (rank 3 for single channel, rank 4 otherwise) and
/// labels as rank-1 IDX. Pixels are quantized to round(p * 255).
inline void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
  std::vector<std::uint8_t> img;
  if (ds.channels == 1) {
    detail::push_be32(img, kIdxImageMagic);
  } else {
    detail::push_be32(img, kIdxImage4Magic);
  }
  detail::push_be32(img, static_cast<std::uint32_t>(ds.size()));
  if (ds.channels != 1) detail::push_be32(img, static_cast<std::uint32_t>(ds.channels));
  detail::push_be32(img, static_cast<std::uint32_t>(ds.height));
  detail::push_be32(img, static_cast<std::uint32_t>(ds.width));
  for (float p : ds.pixels) img.push_back(detail::to_byte(p));
  detail::write_file(images_path, img);

  std::vector<std::uint8_t> lab;
  detail::push_be32(lab, kIdxLabelMagic);
  detail::push_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (int l : ds.labels) {
    if (l < 0 || l > 255) throw ValueError("write_idx: label " + std::to_string(l) + " does not fit a byte");
    lab.push_back(static_cast<std::uint8_t>(l));
  }
  detail::write_file(labels_path, lab);
}

/// CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes
/// (R, G, B planes of 32x32).
inline Dataset load_cifar_binary(const std::filesystem::path& path, std::size_t class_count = 10) {
  const auto bytes = detail::read_file(path);
  if (bytes.empty()) throw TruncatedError(path.string() + ": empty CIFAR file");
  if (bytes.size() % kCifarRecord != 0) {
    throw TruncatedError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of the " +
                         std::to_string(kCifarRecord) + "-byte record");
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset ds;
  ds.channels = 3;
  ds.height = 32;
  ds.width = 32;
  ds.class_count = class_count;
  ds.labels.resize(n);
  ds.pixels.resize(n * 3072);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecord;
    if (rec[0] >= class_count) {
      throw FormatError(path.string() + ": record " + std::to_string(i) + " has label " + std::to_string(rec[0]) +
                        " out of range for " + std::to_string(class_count) + " classes");
    }
    ds.labels[i] = rec[0];
    for (std::size_t j = 0; j < 3072; ++j) ds.pixels[i * 3072 + j] = static_cast<float>(rec[1 + j]) / 255.0f;
  }
  return ds;
}

inline void write_cifar_binary(const Dataset& ds, const std::filesystem::path& path) {
  if (ds.channels != 3 || ds.height != 32 || ds.width != 32) throw ShapeError("CIFAR records are 3x32x32");
  std::vector<std::uint8_t> bytes;
  bytes.reserve(ds.size() * kCifarRecord);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    bytes.push_back(static_cast<std::uint8_t>(ds.labels[i]));
    for (float p : ds.image(i)) bytes.push_back(detail::to_byte(p));
  }
  detail::write_file(path, bytes);
}

}  // namespace ts
