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

#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "support.hpp"
#include "ticketscope/data/augment.hpp"
#include "ticketscope/data/formats.hpp"
#include "ticketscope/data/subset.hpp"
#include "ticketscope/data/synthetic.hpp"

namespace ts {
namespace {

using testing::TempDir;

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

TEST(Synthetic, Deterministic) {
  auto a = generate_synthetic(50, 10, 16, 3);
  auto b = generate_synthetic(50, 10, 16, 3);
  auto c = generate_synthetic(50, 10, 16, 4);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.pixels, c.pixels);
  a.validate();
}

TEST(Synthetic, BalancedClasses) {
  auto ds = generate_synthetic(1003, 10, 8, 1);
  auto h = ds.class_histogram();
  const auto [lo, hi] = std::minmax_element(h.begin(), h.end());
  EXPECT_LE(*hi - *lo, 1u);
}

TEST(Synthetic, RotationChangesImage) {
  auto ds = generate_synthetic(500, 10, 16, 9);
  const std::size_t s = 16;
  std::size_t differing = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto img = ds.image(i);
    double d2 = 0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t r = 0; r < s; ++r)
        for (std::size_t q = 0; q < s; ++q) {
          // 90 degrees counterclockwise: out[r][q] = in[q][s-1-r]
          const double v = img[(c * s + q) * s + (s - 1 - r)] - img[(c * s + r) * s + q];
          d2 += v * v;
        }
    differing += d2 > 0;
  }
  EXPECT_GE(differing, 495u);
}

TEST(Synthetic, FamiliesDiffer) {
  SyntheticStyle other;
  other.family = 1;
  auto a = generate_synthetic(20, 10, 16, 3);
  auto b = generate_synthetic(20, 10, 16, 3, other);
  EXPECT_NE(a.pixels, b.pixels);
}

TEST(Synthetic, TooSmall) { EXPECT_THROW(generate_synthetic(10, 2, 7, 0), ValueError); }

TEST(Idx, HandBuiltFixture) {
  TempDir dir("idx_fixture");
  write_bytes(dir / "img", {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 51, 102, 1, 2, 3, 4});
  write_bytes(dir / "lab", {0, 0, 8, 1, 0, 0, 0, 2, 1, 0});
  auto ds = load_idx(dir / "img", dir / "lab");
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.channels, 1u);
  EXPECT_EQ(ds.height, 2u);
  EXPECT_EQ(ds.width, 2u);
  EXPECT_EQ(ds.batch<float>(std::vector<std::size_t>{0, 1}).shape(), (Shape{2, 1, 2, 2}));
  EXPECT_EQ(ds.pixels[1], 1.0f);
  EXPECT_EQ(ds.pixels[0], 0.0f);
  EXPECT_EQ(ds.labels, (std::vector<int>{1, 0}));
  EXPECT_EQ(ds.class_count, 2u);
}

TEST(Idx, BadMagicNamesBytes) {
  TempDir dir("idx_magic");
  write_bytes(dir / "img", {0, 0, 9, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 7});
  write_bytes(dir / "lab", {0, 0, 8, 1, 0, 0, 0, 1, 0});
  try {
    load_idx(dir / "img", dir / "lab");
    FAIL() << "expected BadMagicError";
  } catch (const BadMagicError& e) {
    EXPECT_NE(std::string(e.what()).find("00 00 09 03"), std::string::npos) << e.what();
  }
}

TEST(Idx, TruncatedAndLabelRange) {
  TempDir dir("idx_trunc");
  write_bytes(dir / "img", {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 51});
  write_bytes(dir / "lab", {0, 0, 8, 1, 0, 0, 0, 2, 1, 0});
  EXPECT_THROW(load_idx(dir / "img", dir / "lab"), TruncatedError);
  write_bytes(dir / "img", {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 5});
  write_bytes(dir / "lab", {0, 0, 8, 1, 0, 0, 0, 1, 4});
  EXPECT_THROW(load_idx(dir / "img", dir / "lab", 3), FormatError);
}

TEST(Idx, RoundTripBytes) {
  TempDir dir("idx_roundtrip");
  auto ds = generate_synthetic(30, 5, 8, 2);
  write_idx(ds, dir / "a.img", dir / "a.lab");
  auto back = load_idx(dir / "a.img", dir / "a.lab", 5);
  write_idx(back, dir / "b.img", dir / "b.lab");
  EXPECT_EQ(read_bytes(dir / "a.img"), read_bytes(dir / "b.img"));
  EXPECT_EQ(read_bytes(dir / "a.lab"), read_bytes(dir / "b.lab"));
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.channels, 3u);
  for (std::size_t i = 0; i < ds.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], ds.pixels[i], 0.5 / 255 + 1e-7);
}

TEST(Cifar, RoundTripAndErrors) {
  TempDir dir("cifar");
  auto ds = generate_synthetic(4, 10, 32, 2);
  write_cifar_binary(ds, dir / "batch.bin");
  EXPECT_EQ(std::filesystem::file_size(dir / "batch.bin"), 4u * 3073u);
  auto back = load_cifar_binary(dir / "batch.bin");
  write_cifar_binary(back, dir / "again.bin");
  EXPECT_EQ(read_bytes(dir / "batch.bin"), read_bytes(dir / "again.bin"));
  auto bytes = read_bytes(dir / "batch.bin");
  bytes[1] = 255;
  write_bytes(dir / "x.bin", bytes);
  EXPECT_EQ(load_cifar_binary(dir / "x.bin").pixels[0], 1.0f);
  bytes.resize(bytes.size() - 10);
  write_bytes(dir / "t.bin", bytes);
  EXPECT_THROW(load_cifar_binary(dir / "t.bin"), TruncatedError);
  bytes.resize(3073);
  bytes[0] = 10;
  write_bytes(dir / "l.bin", bytes);
  EXPECT_THROW(load_cifar_binary(dir / "l.bin"), FormatError);
}

Dataset hundred_per_class() { return generate_synthetic(1000, 10, 8, 5); }

TEST(Subset, FullFraction) {
  auto ds = hundred_per_class();
  auto s = sample_labeled_subset(ds, {1.0, SubsetMode::kPerClass, 1});
  EXPECT_EQ(s.labeled.size(), ds.size());
  EXPECT_TRUE(s.unlabeled.empty());
}

TEST(Subset, PerClassCounts) {
  auto s = sample_labeled_subset(hundred_per_class(), {0.1, SubsetMode::kPerClass, 1});
  EXPECT_EQ(s.labeled.size(), 100u);
  for (auto c : s.labeled.class_histogram()) EXPECT_EQ(c, 10u);
  EXPECT_TRUE(s.unlabeled.labels_hidden());
}

TEST(Subset, ByClassCounts) {
  auto s = sample_labeled_subset(hundred_per_class(), {0.1, SubsetMode::kByClass, 1});
  EXPECT_EQ(s.labeled.size(), 100u);
  const auto h = s.labeled.class_histogram();
  EXPECT_EQ(std::count(h.begin(), h.end(), 100u), 1);
}

TEST(Subset, MinimumOne) {
  auto ds = generate_synthetic(30, 3, 8, 5);
  auto s = sample_labeled_subset(ds, {0.01, SubsetMode::kPerClass, 1});
  EXPECT_EQ(s.labeled.size(), 3u);
  auto b = sample_labeled_subset(ds, {0.01, SubsetMode::kByClass, 1});
  EXPECT_EQ(b.labeled.size(), 10u);
}

TEST(Subset, PartitionAndDeterminism) {
  auto ds = hundred_per_class();
  for (auto mode : {SubsetMode::kPerClass, SubsetMode::kByClass}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto s = sample_labeled_subset(ds, {0.23, mode, seed});
      EXPECT_EQ(s.labeled.size() + s.unlabeled.size(), ds.size());
      std::set<std::size_t> all(s.labeled_index.begin(), s.labeled_index.end());
      for (auto i : s.unlabeled_index) EXPECT_TRUE(all.insert(i).second);
      EXPECT_EQ(all.size(), ds.size());
      auto again = sample_labeled_subset(ds, {0.23, mode, seed});
      EXPECT_EQ(again.labeled_index, s.labeled_index);
    }
  }
}

TEST(Subset, InvalidSpec) {
  auto ds = hundred_per_class();
  EXPECT_THROW(sample_labeled_subset(ds, {0.0, SubsetMode::kPerClass, 1}), ValueError);
  EXPECT_THROW(sample_labeled_subset(ds, {1.5, SubsetMode::kPerClass, 1}), ValueError);
  EXPECT_THROW(parse_subset_mode("global"), ValueError);
}

TEST(Augment, DeterministicGivenRng) {
  auto ds = generate_synthetic(1, 1, 16, 5);
  for (auto policy : {AugmentPolicy::standard(), AugmentPolicy::exemplar()}) {
    Rng a(7), b(7);
    EXPECT_EQ(augment(ds.image(0), 3, 16, 16, policy, a), augment(ds.image(0), 3, 16, 16, policy, b));
  }
}

TEST(Augment, IdentityPolicy) {
  auto ds = generate_synthetic(1, 1, 16, 5);
  Rng rng(1);
  auto out = augment(ds.image(0), 3, 16, 16, AugmentPolicy::none(), rng);
  EXPECT_TRUE(std::equal(out.begin(), out.end(), ds.image(0).begin()));
  EXPECT_EQ(rng.state(), Rng(1).state());
}

TEST(Augment, OutputRange) {
  auto ds = generate_synthetic(10, 10, 16, 5);
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const auto policy = i % 2 ? AugmentPolicy::exemplar() : AugmentPolicy::standard();
    for (float v : augment(ds.image(static_cast<std::size_t>(i) % 10), 3, 16, 16, policy, rng)) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Augment, FlipOnlyMirrors) {
  std::vector<float> img{0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f, 0.8f, 0.9f};
  AugmentPolicy p;
  p.flip = true;
  bool seen_flip = false;
  Rng rng(0);
  for (int i = 0; i < 20; ++i) {
    auto out = augment(img, 1, 3, 3, p, rng);
    if (out != img) {
      EXPECT_EQ(out, (std::vector<float>{0.3f, 0.2f, 0.1f, 0.6f, 0.5f, 0.4f, 0.9f, 0.8f, 0.7f}));
      seen_flip = true;
    }
  }
  EXPECT_TRUE(seen_flip);
}

TEST(Rng, SplitStreamsIndependentAndStable) {
  Rng r(1);
  auto a = r.split("x").next_u64();
  EXPECT_EQ(a, Rng(1).split("x").next_u64());
  EXPECT_NE(a, r.split("y").next_u64());
  EXPECT_EQ(r.state(), 1u);
  auto s = Rng(4).sample_without_replacement(10, 10);
  std::sort(s.begin(), s.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(s[i], i);
}

}  // namespace
}  // namespace ts
