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

#include "support.hpp"
#include "ticketscope/data/synthetic.hpp"
#include "ticketscope/eval/transfer.hpp"

namespace ts {
namespace {

using testing::identical_state;
using testing::masked_nonzero;

ArchSpec tiny_spec() {
  ArchSpec s;
  s.height = s.width = 8;
  s.widths = {4, 6, 8};
  return s;
}

TrainConfig quick_train(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  return c;
}

TEST(Score, OracleLogitsScorePerfectly) {
  const std::vector<int> labels{2, 0, 1, 1, 0};
  Tensor<double> logits({5, 3}, -1.0);
  for (std::size_t i = 0; i < labels.size(); ++i) logits[i * 3 + static_cast<std::size_t>(labels[i])] = 4.0;
  const auto m = accuracy_from_logits(logits, labels);
  EXPECT_DOUBLE_EQ(m.top1, 1.0);
  EXPECT_EQ(m.count, 5u);
  EXPECT_EQ(m.per_class, (std::vector<double>{1.0, 1.0, 1.0}));
}

TEST(Score, ConstantLogitsPredictClassZero) {
  const std::vector<int> labels{0, 1, 2, 0, 3, 3, 3, 0};
  const Tensor<float> logits({8, 4}, 0.25f);
  const auto m = accuracy_from_logits(logits, labels);
  EXPECT_DOUBLE_EQ(m.top1, 3.0 / 8.0);
  EXPECT_EQ(predictions(logits), std::vector<int>(8, 0));
}

TEST(Score, HandFixtureWithThreeCorrect) {
  const std::vector<int> predicted{1, 0, 2, 2};
  const std::vector<int> labels{1, 0, 2, 1};
  const auto m = score(predicted, labels, 3);
  EXPECT_DOUBLE_EQ(m.top1, 0.75);
  EXPECT_DOUBLE_EQ(m.per_class[1], 0.5);
  EXPECT_DOUBLE_EQ(m.per_class[0], 1.0);
  EXPECT_THROW(score(predicted, std::vector<int>{1, 0, 3, 1}, 3), ValueError);
  EXPECT_THROW(score(predicted, std::vector<int>{1, 0}, 3), ShapeError);
}

TEST(Evaluate, IsPureAndDeterministic) {
  const auto ds = generate_synthetic(60, 10, 8, 4);
  auto m = build_model<float>(tiny_spec(), 2);
  train(m, nullptr, ds, TaskObjective{}, quick_train(1), 1);
  const auto before = m;
  const auto a = evaluate(m, ds);
  const auto b = evaluate(m, ds, kLabelHead, 7);
  EXPECT_EQ(a.top1, b.top1);
  EXPECT_EQ(a.per_class, b.per_class);
  EXPECT_TRUE(identical_state(m, before));
  EXPECT_THROW(evaluate(m, ds, "missing"), ValueError);
}

TEST(Evaluate, ConstantHeadScoresTheShareOfClassZero) {
  auto ds = generate_synthetic(40, 4, 8, 4);
  ds.labels[1] = 0;
  ds.labels[2] = 0;
  auto m = build_model<float>([] {
    auto s = tiny_spec();
    s.num_classes = 4;
    return s;
  }(), 2);
  auto& w = m.registry().at("classifier.weight").value;
  std::fill(w.data(), w.data() + w.size(), 0.0f);
  const auto hist = ds.class_histogram();
  EXPECT_DOUBLE_EQ(evaluate(m, ds).top1, static_cast<double>(hist[0]) / 40.0);
}

TEST(Evaluate, RotationAccuracyCoversAllTurns) {
  const auto ds = generate_synthetic(10, 10, 8, 4);
  auto m = build_model<float>(tiny_spec(), 2);
  attach_heads(m, TaskObjective{TaskKind::kRotnet}, 1);
  auto& w = m.registry().at("rotation.weight").value;
  std::fill(w.data(), w.data() + w.size(), 0.0f);
  const auto r = rotation_accuracy(m, ds);
  EXPECT_EQ(r.count, 40u);
  EXPECT_DOUBLE_EQ(r.top1, 0.25);
}

class Probe : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    train_set = new Dataset(generate_synthetic(400, 10, 8, 11));
    test_set = new Dataset(generate_synthetic(1000, 10, 8, 12));
  }
  static void TearDownTestSuite() {
    delete train_set;
    delete test_set;
  }
  static Dataset* train_set;
  static Dataset* test_set;
};
Dataset* Probe::train_set = nullptr;
Dataset* Probe::test_set = nullptr;

TEST_F(Probe, BackboneIsNeverModified) {
  auto m = build_model<float>(tiny_spec(), 3);
  attach_heads(m, TaskObjective{TaskKind::kRotnet}, 1);
  train(m, nullptr, *train_set, TaskObjective{TaskKind::kRotnet}, quick_train(1), 1);
  const auto before = m;
  ProbeConfig cfg;
  cfg.epochs = 3;
  const auto r = linear_probe(m, *train_set, *test_set, cfg);
  EXPECT_TRUE(identical_state(m, before));
  EXPECT_GT(r.train_top1, 0.1);
  const auto again = linear_probe(m, *train_set, *test_set, cfg);
  EXPECT_EQ(r.top1, again.top1);
}

TEST_F(Probe, ZeroEpochsIsChance) {
  double mean = 0;
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    const auto m = build_model<float>(tiny_spec(), 100 + s);
    ProbeConfig cfg;
    cfg.epochs = 0;
    cfg.seed = static_cast<std::uint64_t>(s);
    mean += linear_probe(m, *train_set, *test_set, cfg).top1 / seeds;
  }
  // 5 x 1000 balanced test images: 3 sigma of a 0.1 rate is about 0.013
  EXPECT_NEAR(mean, 0.1, 0.04);
}

TEST_F(Probe, LearnsFromFeaturesAndChecksClassCounts) {
  auto m = build_model<float>(tiny_spec(), 3);
  train(m, nullptr, *train_set, TaskObjective{}, quick_train(4), 1);
  ProbeConfig cfg;
  cfg.epochs = 10;
  EXPECT_GT(linear_probe(apply_mask(m, Mask::full(m.registry())), *train_set, *test_set, cfg).top1, 0.2);
  auto other = generate_synthetic(20, 5, 8, 1);
  EXPECT_THROW(linear_probe(m, other, *test_set, cfg), ValueError);
}

TEST(Finetune, FullMaskIsPlainFinetuning) {
  const auto src = generate_synthetic(96, 10, 8, 1);
  SyntheticStyle target_style;
  target_style.family = 1;
  const auto tgt = generate_synthetic(96, 5, 8, 2, target_style);
  const auto tgt_test = generate_synthetic(50, 5, 8, 3, target_style);
  auto m = build_model<float>(tiny_spec(), 4);
  attach_heads(m, TaskObjective{TaskKind::kRotnet}, 1);
  train(m, nullptr, src, TaskObjective{TaskKind::kRotnet}, quick_train(1), 1);

  Subnetwork<float> tuned;
  const auto r = finetune(apply_mask(m, Mask::full(m.registry())), tgt, tgt_test, quick_train(2), 9, &tuned);
  auto plain = m;
  reset_label_head(plain, 5, Rng(9).split("head").next_u64());
  train(plain, nullptr, tgt, TaskObjective{}, quick_train(2), 9);
  EXPECT_TRUE(identical_state(tuned.model, plain));
  EXPECT_DOUBLE_EQ(r.top1, evaluate(plain, tgt_test).top1);
  EXPECT_EQ(tuned.model.head_width(tuned.model.head_index(kLabelHead)), 5u);
}

TEST(Finetune, ModeAKeepsTheMaskFrozen) {
  const auto tgt = generate_synthetic(96, 5, 8, 2);
  const auto m = build_model<float>(tiny_spec(), 4);
  const Mask mask = random_mask(m.registry(), 0.26, 5);
  Subnetwork<float> tuned;
  finetune(apply_mask(m, mask), tgt, tgt, quick_train(2), 9, &tuned);
  EXPECT_EQ(masked_nonzero(tuned.model, mask), 0u);
  EXPECT_EQ(tuned.mask, mask);
}

TEST(Finetune, ModeBPrunesDuringTransfer) {
  const auto tgt = generate_synthetic(96, 5, 8, 2);
  const auto m = build_model<float>(tiny_spec(), 4);
  ImpConfig imp;
  imp.max_iterations = 3;
  imp.report_iterations = {1, 3};
  imp.train = quick_train(1);
  imp.task.kind = TaskKind::kRotnet;
  const auto points = finetune_prune_during_transfer(m, tgt, tgt, imp);
  ASSERT_EQ(points.size(), 4u);
  for (std::size_t t = 0; t < points.size(); ++t) {
    EXPECT_EQ(points[t].iteration, static_cast<int>(t));
    EXPECT_NEAR(points[t].remaining_fraction, std::pow(0.8, static_cast<double>(t)), 0.01);
    EXPECT_GE(points[t].top1, 0.0);
  }
}

}  // namespace
}  // namespace ts
