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

#include "support.hpp"
#include "ticketscope/data/synthetic.hpp"
#include "ticketscope/lab/imp.hpp"

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

const Dataset& train_data() {
  static const Dataset ds = generate_synthetic(96, 10, 8, 1);
  return ds;
}

const Dataset& test_data() {
  static const Dataset ds = [] {
    auto d = generate_synthetic(40, 10, 8, 2);
    d.split = "test";
    return d;
  }();
  return ds;
}

TrainConfig quick_train(std::size_t epochs = 1) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.schedule = StepSchedule{0.05, 10.0, {}, 0.0};
  return c;
}

ImpConfig quick_imp(int iterations) {
  ImpConfig c;
  c.max_iterations = iterations;
  c.report_iterations = {};
  for (int t = 1; t <= iterations; ++t) c.report_iterations.push_back(t);
  c.train = quick_train();
  c.rewind_samples = 32;
  c.seed = 42;
  return c;
}

TEST(Train, PlanDropsTheTail) {
  const auto p = plan_batches(100, 32);
  EXPECT_EQ(p.batch, 32u);
  EXPECT_EQ(p.steps_per_epoch, 3u);
  EXPECT_EQ(p.total_samples(2), 192u);
  EXPECT_EQ(plan_batches(5, 64).batch, 5u);
  EXPECT_THROW(plan_batches(1, 8), ValueError);
}

TEST(Train, ConfigValidationNamesTheKey) {
  auto c = quick_train();
  c.batch_size = 1;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "batch_size");
  }
  c = quick_train();
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, SameSeedIsBitIdentical) {
  auto a = build_model<float>(tiny_spec(), 3);
  auto b = a;
  const TaskObjective task{TaskKind::kRotnet};
  attach_heads(a, task, 1);
  attach_heads(b, task, 1);
  train(a, nullptr, train_data(), task, quick_train(), 9);
  train(b, nullptr, train_data(), task, quick_train(), 9);
  EXPECT_TRUE(identical_state(a, b));
  auto c = build_model<float>(tiny_spec(), 3);
  attach_heads(c, task, 1);
  train(c, nullptr, train_data(), task, quick_train(), 10);
  EXPECT_FALSE(identical_state(a, c));
}

TEST(Train, UnusedHeadsAreUntouched) {
  auto m = build_model<float>(tiny_spec(), 3);
  attach_heads(m, TaskObjective{TaskKind::kRotnet}, 1);
  const auto rot = m.registry().at("rotation.weight").value.vec();
  const auto cls = m.registry().at("classifier.weight").value.vec();
  train(m, nullptr, train_data(), TaskObjective{}, quick_train(), 2);
  EXPECT_EQ(m.registry().at("rotation.weight").value.vec(), rot);
  EXPECT_NE(m.registry().at("classifier.weight").value.vec(), cls);
}

TEST(CaptureRewind, ZeroSamplesIsInitialization) {
  const auto init = build_model<float>(tiny_spec(), 5);
  auto m = init;
  RewindRequest<float> req{0, std::nullopt};
  train(m, nullptr, train_data(), TaskObjective{}, quick_train(), 1, &req);
  ASSERT_TRUE(req.captured);
  EXPECT_EQ(req.captured->samples, 0u);
  EXPECT_TRUE(identical_state(req.captured->model, init));
  EXPECT_FALSE(identical_state(m, init));
}

TEST(CaptureRewind, SnapshotEqualsTruncatedRun) {
  const auto init = build_model<float>(tiny_spec(), 5);
  auto full = init;
  RewindRequest<float> req{train_data().size(), std::nullopt};
  train(full, nullptr, train_data(), TaskObjective{}, quick_train(3), 7, &req);
  auto one = init;
  auto cfg = quick_train(1);
  train(one, nullptr, train_data(), TaskObjective{}, cfg, 7);
  ASSERT_TRUE(req.captured);
  EXPECT_EQ(req.captured->samples, 96u);
  EXPECT_EQ(req.captured->step, 6u);
  EXPECT_TRUE(identical_state(req.captured->model, one));

  auto again = init;
  RewindRequest<float> req2{train_data().size(), std::nullopt};
  train(again, nullptr, train_data(), TaskObjective{}, quick_train(3), 7, &req2);
  EXPECT_TRUE(identical_state(req.captured->model, req2.captured->model));
}

TEST(CaptureRewind, CapturesAtFirstCrossingAndRejectsOverrun) {
  auto m = build_model<float>(tiny_spec(), 5);
  RewindRequest<float> req{20, std::nullopt};
  train(m, nullptr, train_data(), TaskObjective{}, quick_train(), 7, &req);
  EXPECT_EQ(req.captured->samples, 32u);
  RewindRequest<float> over{97, std::nullopt};
  EXPECT_THROW(train(m, nullptr, train_data(), TaskObjective{}, quick_train(), 7, &over), ValueError);
  RewindRequest<float> end{96, std::nullopt};
  train(m, nullptr, train_data(), TaskObjective{}, quick_train(), 7, &end);
  EXPECT_TRUE(identical_state(end.captured->model, m));
}

TEST(Freeze, MaskedEntriesStayZeroUnderEveryObjective) {
  auto s4l_data = train_data();
  for (std::size_t i = 0; i < s4l_data.size(); i += 3) s4l_data.labels[i] = kHiddenLabel;
  for (auto kind : {TaskKind::kLabels, TaskKind::kRotnet, TaskKind::kExemplar, TaskKind::kS4l}) {
    auto m = build_model<float>(tiny_spec(), 11);
    const TaskObjective task{kind};
    attach_heads(m, task, 2);
    const Mask mask = random_mask(m.registry(), 0.3, 4);
    auto cfg = quick_train(17);  // 102 steps
    train(m, &mask, kind == TaskKind::kS4l ? s4l_data : train_data(), task, cfg, 5,
          nullptr, [&](std::size_t, double) { ASSERT_EQ(masked_nonzero(m, mask), 0u); });
    EXPECT_EQ(masked_nonzero(m, mask), 0u) << task_name(kind);
  }
}

TEST(Imp, RemainingCountsFollowTheRecurrence) {
  auto cfg = quick_imp(5);
  const auto res = imp_run(build_model<float>(tiny_spec(), 1), train_data(), &test_data(), cfg);
  ASSERT_EQ(res.iterations.size(), 6u);
  const std::size_t d = tiny_spec().prunable_weights();
  std::size_t r = d;
  EXPECT_EQ(res.iterations[0].mask.remaining(), d);
  for (int t = 1; t <= 5; ++t) {
    const std::size_t k = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(r) + 0.5));
    r -= k;
    const auto& it = res.iterations[static_cast<std::size_t>(t)];
    EXPECT_EQ(it.iteration, t);
    EXPECT_EQ(it.mask.remaining(), r);
    EXPECT_EQ(it.pruned, k);
    EXPECT_DOUBLE_EQ(it.remaining_fraction, static_cast<double>(r) / static_cast<double>(d));
    EXPECT_NEAR(it.remaining_fraction, std::pow(0.8, t), 0.002);
    EXPECT_TRUE(it.mask.nested_in(res.iterations[static_cast<std::size_t>(t - 1)].mask));
    EXPECT_EQ(masked_nonzero(it.trained, it.mask), 0u);
    EXPECT_TRUE(it.metrics.count("top1"));
    EXPECT_TRUE(it.metrics.count("train_loss"));
  }
}

TEST(Imp, EveryRoundRestartsFromTheRewindPoint) {
  auto cfg = quick_imp(3);
  const auto res = imp_run(build_model<float>(tiny_spec(), 1), train_data(), nullptr, cfg);
  EXPECT_EQ(res.rewind.samples, 32u);
  for (int t = 1; t <= 3; ++t) {
    const auto& it = res.iterations[static_cast<std::size_t>(t)];
    Model<float> m = res.rewind.model;
    apply_mask_inplace(m, it.mask);
    for (const auto& e : it.mask.entries) {
      const auto& w = m.registry().at(e.name).value;
      const auto& wk = res.rewind.model.registry().at(e.name).value;
      for (std::size_t j = 0; j < w.size(); ++j) {
        if (e.bits[j]) ASSERT_EQ(std::memcmp(&w[j], &wk[j], sizeof(float)), 0);
      }
    }
    train(m, &it.mask, train_data(), cfg.task, cfg.train, cfg.round_seed(t));
    EXPECT_TRUE(identical_state(m, it.trained)) << "round " << t;
  }
}

TEST(Imp, DeterministicAndResumable) {
  auto cfg = quick_imp(3);
  cfg.task.kind = TaskKind::kRotnet;
  const auto a = imp_run(build_model<float>(tiny_spec(), 1), train_data(), &test_data(), cfg);
  const auto b = imp_run(build_model<float>(tiny_spec(), 1), train_data(), &test_data(), cfg);
  ASSERT_EQ(a.iterations.size(), b.iterations.size());
  for (std::size_t i = 0; i < a.iterations.size(); ++i) {
    EXPECT_EQ(a.iterations[i].mask, b.iterations[i].mask);
    EXPECT_EQ(a.iterations[i].metrics, b.iterations[i].metrics);
    EXPECT_TRUE(identical_state(a.iterations[i].trained, b.iterations[i].trained));
  }
  EXPECT_TRUE(a.iterations[1].metrics.count("rotation_top1"));

  ImpResume<float> resume{1, a.iterations[1].trained, a.iterations[1].mask, a.rewind};
  const auto c = imp_run(build_model<float>(tiny_spec(), 1), train_data(), &test_data(), cfg, {}, resume);
  ASSERT_EQ(c.iterations.size(), 2u);
  EXPECT_EQ(c.iterations[0].iteration, 2);
  EXPECT_EQ(c.iterations[1].mask, a.iterations[3].mask);
  EXPECT_TRUE(identical_state(c.iterations[1].trained, a.iterations[3].trained));
}

TEST(Imp, NonReportRoundsDropTheirModels) {
  auto cfg = quick_imp(3);
  cfg.report_iterations = {2};
  std::vector<int> seen;
  const auto res = imp_run(build_model<float>(tiny_spec(), 1), train_data(), nullptr, cfg,
                           [&](const ImpIteration<float>& it, const RewindCheckpoint<float>&) {
                             seen.push_back(it.iteration);
                             EXPECT_FALSE(it.trained.registry().size() == 0);
                           });
  EXPECT_EQ(seen, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_FALSE(res.iterations[0].trained.registry().size() == 0);
  EXPECT_TRUE(res.iterations[1].trained.registry().size() == 0);
  EXPECT_FALSE(res.iterations[2].trained.registry().size() == 0);
  EXPECT_TRUE(res.iterations[3].trained.registry().size() == 0);
}

TEST(Imp, LayerwisePruningLeavesDeepLayersDense) {
  auto cfg = quick_imp(2);
  cfg.depth_limit = 1;
  const auto res = imp_run(build_model<float>(tiny_spec(), 1), train_data(), nullptr, cfg);
  const auto& mask = res.iterations.back().mask;
  for (const auto& e : mask.entries) {
    const auto ones = static_cast<std::size_t>(std::count(e.bits.begin(), e.bits.end(), 1));
    if (e.layer_id == 1) {
      EXPECT_LT(ones, e.bits.size());
    } else {
      EXPECT_EQ(ones, e.bits.size());
    }
  }
}

TEST(Imp, DivergenceRecordsTheIteration) {
  auto cfg = quick_imp(1);
  cfg.train.schedule.base_lr = 1e30;
  try {
    imp_run(build_model<float>(tiny_spec(), 1), train_data(), nullptr, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDivergence& e) {
    EXPECT_EQ(e.iteration(), 0);
  }
}

TEST(ImpConfig, DefaultsAndValidation) {
  ImpConfig c;
  EXPECT_EQ(c.report_iterations.size(), 14u);
  EXPECT_EQ(c.max_iterations, 30);
  EXPECT_DOUBLE_EQ(c.rate, 0.2);
  EXPECT_EQ(c.resolved_rewind(5000), 15000u);
  EXPECT_NO_THROW(c.validate());
  const std::size_t d = ArchSpec::preset("mini_conv").prunable_weights();
  EXPECT_GE(remaining_fraction_after(d, 0.2, c.report_iterations.front()), 0.8 - 1e-9);
  EXPECT_LE(remaining_fraction_after(d, 0.2, c.report_iterations.front()), 0.8 + 1e-4);
  EXPECT_GE(remaining_fraction_after(d, 0.2, c.report_iterations.back()), 0.001);
  EXPECT_LE(remaining_fraction_after(d, 0.2, c.report_iterations.back()), 0.0015);
  for (auto [key, mutate] : std::vector<std::pair<std::string, std::function<void(ImpConfig&)>>>{
           {"imp.rate", [](ImpConfig& x) { x.rate = 1.0; }},
           {"imp.report_iterations", [](ImpConfig& x) { x.report_iterations = {3, 2}; }},
           {"imp.report_iterations", [](ImpConfig& x) { x.report_iterations = {31}; }},
           {"imp.depth_limit", [](ImpConfig& x) { x.depth_limit = 0; }}}) {
    ImpConfig bad;
    mutate(bad);
    try {
      bad.validate();
      ADD_FAILURE() << key;
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.key(), key);
    }
  }
  EXPECT_NE(c.round_seed(1), c.round_seed(2));
}

TEST(ImpArithmetic, ThirtyIterationsLeaveAboutOneThousandth) {
  for (std::size_t d : {std::size_t{23472}, std::size_t{161352}, std::size_t{1000000}}) {
    const double f = remaining_fraction_after(d, 0.2, 30);
    EXPECT_GE(f, 0.0010);
    EXPECT_LE(f, 0.0015);
  }
}

TEST(Ticket, ExtractReproducesTheCheckpoint) {
  auto m = build_model<float>(tiny_spec(), 2);
  RewindRequest<float> req{32, std::nullopt};
  train(m, nullptr, train_data(), TaskObjective{}, quick_train(), 3, &req);
  const auto& ck = *req.captured;
  const auto full = extract_ticket(Mask::full(ck.model.registry()), ck);
  EXPECT_TRUE(identical_state(full.model, ck.model));

  const Mask mask = random_mask(ck.model.registry(), 0.4, 8);
  const auto t1 = extract_ticket(mask, ck);
  const auto t2 = extract_ticket(mask, ck);
  EXPECT_TRUE(identical_state(t1.model, t2.model));
  EXPECT_EQ(masked_nonzero(t1.model, mask), 0u);
  for (std::size_t i = 0; i < ck.model.registry().size(); ++i) {
    const auto& p = ck.model.registry()[i];
    const auto& q = t1.model.registry()[i];
    const Mask::Entry* e = mask.find(p.name);
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      if (!e || e->bits[j]) ASSERT_EQ(std::memcmp(&p.value[j], &q.value[j], sizeof(float)), 0) << p.name;
    }
  }
  for (std::size_t i = 0; i < ck.model.buffers().size(); ++i) {
    EXPECT_EQ(t1.model.buffers()[i].value.vec(), ck.model.buffers()[i].value.vec());
  }
  auto other = build_model<float>(ArchSpec::preset("mini_conv"), 1);
  EXPECT_THROW(extract_ticket(Mask::full(other.registry()), ck), ValueError);
}

TEST(Ticket, RandomReinitIsIndependentOfHistory) {
  const auto spec = ArchSpec::preset("mini_conv");
  const auto base = build_model<double>(spec, 1);
  const Mask mask = random_mask(base.registry(), 0.5, 3);
  const auto a = random_reinit<double>(mask, spec, 10);
  const auto b = random_reinit<double>(mask, spec, 11);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_FALSE(identical_state(a.model, b.model));
  EXPECT_EQ(masked_nonzero(a.model, mask), 0u);
  for (const auto& e : mask.entries) {
    const auto& w = a.model.registry().at(e.name).value;
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (!e.bits[j]) continue;
      sum += w[j];
      sq += w[j] * w[j];
      ++n;
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sq / static_cast<double>(n) - mean * mean;
    const double expect = 2.0 / static_cast<double>(e.shape[1] * e.shape[2] * e.shape[3]);
    EXPECT_NEAR(var / expect, 1.0, 0.15) << e.name;
  }
}

TEST(Retrain, FullMaskIsOrdinaryTraining) {
  const auto init = build_model<float>(tiny_spec(), 6);
  auto plain = init;
  std::vector<double> l1, l2;
  train(plain, nullptr, train_data(), TaskObjective{}, quick_train(2), 4, nullptr,
        [&](std::size_t, double l) { l1.push_back(l); });
  auto masked = init;
  const Mask full = Mask::full(init.registry());
  train(masked, &full, train_data(), TaskObjective{}, quick_train(2), 4, nullptr,
        [&](std::size_t, double l) { l2.push_back(l); });
  EXPECT_EQ(l1, l2);
  EXPECT_TRUE(identical_state(plain, masked));

  auto sub = apply_mask(init, full);
  const auto r = retrain(sub, train_data(), test_data(), quick_train(2), 4);
  EXPECT_TRUE(identical_state(sub.model, plain));
  EXPECT_DOUBLE_EQ(r.top1, evaluate(plain, test_data()).top1);
}

TEST(Retrain, MaskStaysFrozenAndHeadIsAttached) {
  auto m = build_model<float>(tiny_spec(), 6);
  const Mask mask = random_mask(m.registry(), 0.2, 1);
  auto sub = apply_mask(m, mask);
  const auto r = retrain(sub, train_data(), test_data(), quick_train(2), 4);
  EXPECT_EQ(masked_nonzero(sub.model, mask), 0u);
  EXPECT_GE(r.top1, 0.0);
  EXPECT_LE(r.top1, 1.0);
  EXPECT_TRUE(std::isfinite(r.train_loss));
}

}  // namespace
}  // namespace ts
