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

#include <cmath>
#include <numeric>

#include "support.hpp"
#include "ticketscope/data/synthetic.hpp"
#include "ticketscope/lab/train.hpp"
#include "ticketscope/tasks/objectives.hpp"

namespace ts {
namespace {

ArchSpec tiny_spec() {
  ArchSpec s;
  s.height = s.width = 8;
  s.widths = {4, 4, 6};
  return s;
}

Dataset tiny_data(std::size_t n, std::uint64_t seed = 3) { return generate_synthetic(n, 10, 8, seed); }

template <class T>
Tensor<T> all_images(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return ds.batch<T>(idx);
}

long double reference_ce(const Tensor<double>& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  long double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    long double z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<long double>(logits[i * c + j]));
    total += std::log(z) - logits[i * c + static_cast<std::size_t>(labels[i])];
  }
  return total / n;
}

TEST(Rotate90, QuarterTurnIsCounterClockwise) {
  const Tensor<float> x({1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  const auto y = rotate90(x, 1);
  EXPECT_EQ(y.vec(), (std::vector<float>{2, 4, 1, 3}));
  EXPECT_EQ(rotate90(x, 2).vec(), (std::vector<float>{4, 3, 2, 1}));
  EXPECT_EQ(rotate90(x, 3).vec(), (std::vector<float>{3, 1, 4, 2}));
}

TEST(Rotate90, ClosureAndComposition) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = testing::random_tensor({3, 5, 5}, rng);
    EXPECT_EQ(rotate90(x, 0).vec(), x.vec());
    EXPECT_EQ(rotate90(rotate90(rotate90(rotate90(x, 1), 1), 1), 1).vec(), x.vec());
    EXPECT_EQ(rotate90(rotate90(x, 1), 1).vec(), rotate90(x, 2).vec());
    EXPECT_EQ(rotate90(rotate90(x, 1), 2).vec(), rotate90(x, 3).vec());
  }
  EXPECT_EQ(rotation_degrees(3), 270);
}

TEST(Rotate90, NonSquareRectangleTransposesShape) {
  Tensor<float> x({1, 2, 3});
  std::iota(x.data(), x.data() + 6, 0.0f);
  const auto y = rotate90(x, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 2}));
  EXPECT_EQ(rotate90(rotate90(rotate90(y, 1), 1), 1).vec(), x.vec());
}

TEST(RotnetBatch, AllFourEnumeratesImageMajor) {
  Rng rng(1);
  const auto x = testing::random_tensor({2, 1, 3, 3}, rng);
  auto [out, labels] = rotnet_batch(x, RotnetMode::kAllFour, rng);
  EXPECT_EQ(labels, (std::vector<int>{0, 1, 2, 3, 0, 1, 2, 3}));
  ASSERT_EQ(out.shape(), (Shape{8, 1, 3, 3}));
  for (std::size_t i = 0; i < 2; ++i) {
    Tensor<double> img({1, 3, 3}, std::vector<double>(x.data() + i * 9, x.data() + (i + 1) * 9));
    for (int r = 0; r < 4; ++r) {
      const auto expect = rotate90(img, r);
      EXPECT_TRUE(std::equal(expect.data(), expect.data() + 9, out.data() + (i * 4 + r) * 9));
    }
  }
}

TEST(RotnetBatch, SampledLabelsAreUniform) {
  Rng rng(5);
  const std::size_t n = 10000;
  Tensor<float> x({n, 1, 2, 2});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i % 7);
  auto [out, labels] = rotnet_batch(x, RotnetMode::kSampled, rng);
  ASSERT_EQ(labels.size(), n);
  std::vector<int> hist(4, 0);
  for (int l : labels) ++hist.at(static_cast<std::size_t>(l));
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (int h : hist) EXPECT_LT(std::abs(h - 2500.0), 3 * sigma);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 0) EXPECT_TRUE(std::equal(x.data() + 4 * i, x.data() + 4 * i + 4, out.data() + 4 * i));
  }
}

TEST(RotnetBatch, RejectsNonSquareImages) {
  Rng rng(0);
  EXPECT_THROW(rotnet_batch(Tensor<float>({1, 1, 2, 3}), RotnetMode::kAllFour, rng), ShapeError);
  EXPECT_EQ(parse_rotnet_mode("sampled"), RotnetMode::kSampled);
  EXPECT_THROW(parse_rotnet_mode("three"), ValueError);
}

TEST(Heads, AttachAddsMissingHeadsOnly) {
  auto m = build_model<float>(tiny_spec(), 1);
  const auto before = m.registry().at("classifier.weight").value.vec();
  TaskObjective s4l{TaskKind::kS4l};
  attach_heads(m, s4l, 2);
  EXPECT_EQ(m.head_width(m.head_index(kLabelHead)), 10u);
  EXPECT_EQ(m.head_width(m.head_index(kRotationHead)), 4u);
  EXPECT_EQ(m.registry().at("classifier.weight").value.vec(), before);
  TaskObjective ex{TaskKind::kExemplar};
  attach_heads(m, ex, 2);
  EXPECT_EQ(m.head_width(m.head_index(kEmbeddingHead)), 64u);
  for (const auto& h : m.heads()) EXPECT_FALSE(m.registry()[h.weight].prunable);
  EXPECT_EQ(parse_task("rotnet"), TaskKind::kRotnet);
  EXPECT_STREQ(task_name(TaskKind::kS4l), "s4l");
  EXPECT_THROW(parse_task("jigsaw"), ValueError);
}

TEST(SupervisedLoss, PerfectAndUniformLogits) {
  auto m = build_model<double>(tiny_spec(), 4);
  const auto ds = tiny_data(20);
  const auto x = all_images<double>(ds);
  auto& w = m.registry().at("classifier.weight").value;
  auto& b = m.registry().at("classifier.bias").value;
  std::fill(w.data(), w.data() + w.size(), 0.0);
  {
    Graph<double> g;
    EXPECT_NEAR(g.value(supervised_loss(g, m, x, ds.labels))[0], std::log(10.0), 1e-12);
  }
  b[3] = 60.0;
  const std::vector<int> threes(ds.size(), 3);
  Graph<double> g;
  EXPECT_LT(g.value(supervised_loss(g, m, x, threes))[0], 1e-20);
}

TEST(SupervisedLoss, MatchesClosedForm) {
  auto m = build_model<double>(tiny_spec(), 6);
  const auto ds = tiny_data(16);
  const auto x = all_images<double>(ds);
  Graph<double> g1;
  const auto logits = g1.value(m.forward(g1, g1.constant(x), ops::Mode::kTrain));
  auto m2 = build_model<double>(tiny_spec(), 6);
  Graph<double> g2;
  const double loss = g2.value(supervised_loss(g2, m2, x, ds.labels))[0];
  EXPECT_NEAR(loss, static_cast<double>(reference_ce(logits, ds.labels)), 1e-10);
}

TEST(RotnetLoss, EqualsCrossEntropyOnRotatedBatch) {
  auto m = build_model<double>(tiny_spec(), 7);
  attach_heads(m, TaskObjective{TaskKind::kRotnet}, 1);
  auto m2 = m;
  const auto x = all_images<double>(tiny_data(6));
  Rng r1(9), r2(9);
  Graph<double> g;
  const double loss = g.value(rotnet_loss(g, m, x, RotnetMode::kAllFour, r1))[0];
  auto [rot, labels] = rotnet_batch(x, RotnetMode::kAllFour, r2);
  Graph<double> g2;
  const auto logits =
      g2.value(m2.head(g2, m2.features(g2, g2.constant(rot), ops::Mode::kTrain), m2.head_index(kRotationHead)));
  EXPECT_NEAR(loss, static_cast<double>(reference_ce(logits, labels)), 1e-10);
}

TEST(Exemplar, IdenticalEmbeddingsGiveMargin) {
  auto m = build_model<double>(tiny_spec(), 8);
  attach_heads(m, TaskObjective{TaskKind::kExemplar}, 1);
  auto& w = m.registry().at("embedding.weight").value;
  auto& b = m.registry().at("embedding.bias").value;
  std::fill(w.data(), w.data() + w.size(), 0.0);
  b[0] = 2.0;
  b[5] = -1.0;
  const auto ds = tiny_data(6);
  const std::vector<std::size_t> ids{0, 1, 2, 3, 4, 5};
  Rng rng(1);
  Graph<double> g;
  EXPECT_NEAR(g.value(exemplar_loss(g, m, ds, ids, 0.5, rng))[0], 0.5, 1e-12);
  Graph<double> g2;
  EXPECT_NEAR(g2.value(exemplar_loss(g2, m, ds, ids, 0.3, rng))[0], 0.3, 1e-12);
}

TEST(Exemplar, HingeInactiveWhenNegativesAreFar) {
  Graph<double> g;
  const NodeId a = g.constant(Tensor<double>({3, 2}, std::vector<double>{1, 0, 0, 1, -1, 0}));
  const NodeId p = g.constant(Tensor<double>({3, 2}, std::vector<double>{1, 0.1, 0.1, 1, -1, -0.1}));
  EXPECT_EQ(g.value(exemplar_triplet(g, a, p, {1, 2, 0}, 0.5))[0], 0.0);
}

TEST(Exemplar, ThreeInstanceHandComputation) {
  // anchors, positives; negative of row i is positive row neg[i]
  const std::vector<double> av{0.6, 0.8, 0.0, 1.0, 1.0, 0.0};
  const std::vector<double> pv{0.8, 0.6, 0.6, 0.8, 0.0, -1.0};
  const std::vector<std::size_t> neg{1, 2, 0};
  Graph<double> g;
  const double loss = g.value(exemplar_triplet(g, g.constant(Tensor<double>({3, 2}, av)),
                                               g.constant(Tensor<double>({3, 2}, pv)), neg, 0.5))[0];
  // row 0: d(a,p)=sqrt(0.08), d(a,n)=sqrt(0+0)=0   -> 0.28284 + 0.5
  // row 1: d(a,p)=sqrt(0.36+0.04)=sqrt(0.4), d(a,n)=sqrt(0+4)=2 -> hinge 0
  // row 2: d(a,p)=sqrt(1+1)=sqrt(2), d(a,n)=sqrt(0.04+0.36)=sqrt(0.4)
  const double r0 = std::sqrt(0.08) - 0.0 + 0.5;
  const double r1 = std::max(0.0, std::sqrt(0.4) - 2.0 + 0.5);
  const double r2 = std::sqrt(2.0) - std::sqrt(0.4) + 0.5;
  EXPECT_NEAR(loss, (r0 + r1 + r2) / 3.0, 1e-6);
}

TEST(Exemplar, GradientMatchesFiniteDifferences) {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<Tensor<double>> inputs{testing::random_tensor({4, 5}, rng), testing::random_tensor({4, 5}, rng)};
    const std::vector<std::size_t> neg{2, 3, 0, 1};
    const auto errs = testing::gradient_errors(inputs, [&](Graph<double>& g, const std::vector<NodeId>& in) {
      return exemplar_triplet(g, ops::l2_normalize(g, in[0]), ops::l2_normalize(g, in[1]), neg, 1.5);
    });
    EXPECT_LT(testing::max_error(errs), 1e-6);
  }
}

TEST(Exemplar, NegativesNeverShareTheInstance) {
  Rng rng(4);
  const std::vector<std::size_t> ids{7, 7, 3, 9, 3};
  std::vector<std::size_t> hits(5, 0);
  for (int rep = 0; rep < 2000; ++rep) {
    const auto neg = sample_negatives(ids, rng);
    for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_NE(ids[neg[i]], ids[i]);
    ++hits[neg[0]];
  }
  EXPECT_EQ(hits[0] + hits[1], 0u);
  for (std::size_t j = 2; j < 5; ++j) EXPECT_NEAR(hits[j] / 2000.0, 1.0 / 3.0, 0.05);
  const std::vector<std::size_t> single{4, 4};
  EXPECT_THROW(sample_negatives(single, rng), ValueError);
  auto m = build_model<float>(tiny_spec(), 1);
  attach_heads(m, TaskObjective{TaskKind::kExemplar}, 1);
  const auto ds = tiny_data(4);
  Graph<float> g;
  const std::vector<std::size_t> one{2};
  EXPECT_THROW(exemplar_loss(g, m, ds, one, 0.5, rng), ValueError);
}

class S4lLoss : public ::testing::Test {
 protected:
  void SetUp() override {
    model = build_model<double>(tiny_spec(), 12);
    attach_heads(model, TaskObjective{TaskKind::kS4l}, 3);
    const auto ds = tiny_data(10);
    labeled = all_images<double>(ds.select(std::vector<std::size_t>{0, 1, 2, 3}));
    unlabeled = all_images<double>(ds.select(std::vector<std::size_t>{4, 5, 6, 7, 8, 9}));
    labels = {0, 1, 2, 3};
  }

  double s4l(const Tensor<double>* l, const Tensor<double>* u) {
    auto m = model;
    Rng rng(1);
    Graph<double> g;
    return g.value(s4l_loss(g, m, l, labels, u, RotnetMode::kAllFour, rng))[0];
  }
  double sup(const Tensor<double>& x) {
    auto m = model;
    Graph<double> g;
    return g.value(supervised_loss(g, m, x, labels))[0];
  }
  double rot(const Tensor<double>& x) {
    auto m = model;
    Rng rng(1);
    Graph<double> g;
    return g.value(rotnet_loss(g, m, x, RotnetMode::kAllFour, rng))[0];
  }

  Model<double> model;
  Tensor<double> labeled, unlabeled;
  std::vector<int> labels;
};

TEST_F(S4lLoss, EmptyLabeledBatchIsPureRotnet) { EXPECT_NEAR(s4l(nullptr, &unlabeled), rot(unlabeled), 1e-12); }

TEST_F(S4lLoss, EmptyUnlabeledBatchIsolatesTerms) {
  EXPECT_NEAR(s4l(&labeled, nullptr), sup(labeled) + rot(labeled), 1e-12);
}

TEST_F(S4lLoss, DecomposesIntoItsTwoSummands) {
  Tensor<double> all({10, 3, 8, 8});
  std::copy(labeled.data(), labeled.data() + labeled.size(), all.data());
  std::copy(unlabeled.data(), unlabeled.data() + unlabeled.size(), all.data() + labeled.size());
  EXPECT_NEAR(s4l(&labeled, &unlabeled), sup(labeled) + rot(all), 1e-6);
  Rng rng(1);
  Graph<double> g;
  EXPECT_THROW(s4l_loss<double>(g, model, nullptr, {}, nullptr, RotnetMode::kAllFour, rng), ValueError);
}

TEST(Objectives, LossesAreFiniteAndNonNegative) {
  const auto ds = tiny_data(24, 8);
  auto s4l_ds = ds;
  for (std::size_t i = 0; i < s4l_ds.size(); i += 2) s4l_ds.labels[i] = kHiddenLabel;
  Rng seeds(77);
  for (auto kind : {TaskKind::kLabels, TaskKind::kRotnet, TaskKind::kExemplar, TaskKind::kS4l}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto m = build_model<float>(tiny_spec(), seeds.next_u64());
      TaskObjective task{kind};
      attach_heads(m, task, seeds.next_u64());
      Rng rng(seeds.next_u64());
      std::vector<std::size_t> idx(8);
      for (auto& i : idx) i = rng.below(ds.size());
      std::sort(idx.begin(), idx.end());
      idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
      Graph<float> g;
      const auto& data = kind == TaskKind::kS4l ? s4l_ds : ds;
      const float loss = g.value(task_loss(g, m, task, data, idx, AugmentPolicy::standard(), rng))[0];
      EXPECT_TRUE(std::isfinite(loss)) << task_name(kind);
      EXPECT_GE(loss, 0.0f) << task_name(kind);
    }
  }
}

TEST(Objectives, LabelsTaskRejectsHiddenLabels) {
  auto ds = tiny_data(4);
  ds.labels[1] = kHiddenLabel;
  auto m = build_model<float>(tiny_spec(), 1);
  Rng rng(0);
  Graph<float> g;
  const std::vector<std::size_t> idx{0, 1};
  EXPECT_THROW(task_loss(g, m, TaskObjective{}, ds, idx, AugmentPolicy::none(), rng), ValueError);
}

}  // namespace
}  // namespace ts
