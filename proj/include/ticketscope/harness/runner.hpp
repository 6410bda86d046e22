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
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ticketscope/harness/checkpoint.hpp"
#include "ticketscope/harness/config.hpp"

namespace ts {

/// Worker count for the experiment grid: TS_THREADS if set, else the number
/// of hardware threads.
inline std::size_t threads_from_env() {
  if (const char* v = std::getenv("TS_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end == v || *end != '\0' || n < 1) throw ConfigError("TS_THREADS", "expected a positive integer");
    return static_cast<std::size_t>(n);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs f(0..n-1) on up to `threads` workers. The first exception (by index)
/// is rethrown after all workers finish.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& f) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t k = std::min(threads, n);
  if (k <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

namespace detail {

inline std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string dataset_digest(const Dataset& d) {
  std::uint64_t h = 14695981039346656037ull;
  const std::size_t dims[] = {d.channels, d.height, d.width, d.class_count};
  h = fnv1a(h, dims, sizeof(dims));
  h = fnv1a(h, d.pixels.data(), d.pixels.size() * sizeof(float));
  h = fnv1a(h, d.labels.data(), d.labels.size() * sizeof(int));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline nlohmann::json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr", t.schedule.base_lr},
          {"decay_factor", t.schedule.decay_factor},
          {"decay_epochs", t.schedule.decay_epochs},
          {"warmup_epochs", t.schedule.warmup_epochs},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"augment", {t.augment.crop_pad, t.augment.flip, t.augment.jitter, t.augment.rotation_deg}}};
}

}  // namespace detail

enum class CellKind { kPretext, kRetrain, kSparsityBaseline, kProbe, kProbeRandom, kFinetune, kFinetuneTransfer };

/// One unit of the grid. Each cell owns one record file under cells/.
struct Cell {
  CellKind kind;
  std::uint64_t seed;
  int iteration = 0;
  std::string scheme;

  std::string key() const {
    char t[16];
    std::snprintf(t, sizeof t, "t%02d", iteration);
    const std::string s = "s" + std::to_string(seed) + ".";
    switch (kind) {
      case CellKind::kPretext: return s + "pretext." + t;
      case CellKind::kRetrain: return s + "retrain." + scheme + "." + t;
      case CellKind::kSparsityBaseline: return s + "retrain.natural_sparsity";
      case CellKind::kProbe: return s + "probe." + t;
      case CellKind::kProbeRandom: return s + "probe.random_init";
      case CellKind::kFinetune: return s + "finetune." + t;
      case CellKind::kFinetuneTransfer: return s + "finetune_transfer";
    }
    return s;
  }
};

struct RunOptions {
  std::size_t threads = 1;
  std::function<void(const std::string&)> log;
};

/// Executes an experiment grid into an output directory:
///
///   seed_<s>/rewind.ckpt          W_k of the pretext run
///   seed_<s>/iter<t>_mask.ckpt    weights after round t and mask m_t
///   cells/<key>.csv               records of one completed cell
///   records.csv                   appended as cells finish, rewritten in grid order by report()
///   summary.json                  mean and standard error over seeds
///
/// A cell whose record file exists is never recomputed.
template <class T>
class ExperimentRunner {
 public:
  ExperimentRunner(ExperimentConfig cfg, std::filesystem::path out, RunOptions opts = {})
      : cfg_(std::move(cfg)), out_(std::move(out)), opts_(std::move(opts)) {
    cfg_.validate();
    std::filesystem::create_directories(out_ / "cells");
    std::tie(train_, test_) = cfg_.dataset.load(cfg_.base_dir);
    if (cfg_.transfer) {
      std::tie(target_train_, target_test_) = cfg_.transfer->load(cfg_.base_dir);
    } else {
      target_train_ = train_;
      target_test_ = test_;
    }
    spec_ = cfg_.arch_spec(train_);
    pretext_train_ = pretext_data();
    check_fingerprint();
  }

  const ExperimentConfig& config() const { return cfg_; }
  const std::filesystem::path& out() const { return out_; }
  std::filesystem::path seed_dir(std::uint64_t s) const { return out_ / ("seed_" + std::to_string(s)); }
  std::filesystem::path iter_path(std::uint64_t s, int t) const {
    return seed_dir(s) / ("iter" + std::to_string(t) + "_mask.ckpt");
  }
  std::filesystem::path rewind_path(std::uint64_t s) const { return seed_dir(s) / "rewind.ckpt"; }
  std::filesystem::path cell_path(const Cell& c) const { return out_ / "cells" / (c.key() + ".csv"); }
  bool done(const Cell& c) const { return std::filesystem::exists(cell_path(c)); }

  /// Everything the stored results depend on. Seeds, the number of rounds,
  /// report points, schemes and evaluations may change between runs.
  nlohmann::json fingerprint() const {
    const auto& task = cfg_.imp.task;
    const auto& p = cfg_.probe;
    nlohmann::json j = {
        {"precision", cfg_.precision},
        {"arch", {{"name", spec_.name}, {"widths", spec_.widths}}},
        {"data", {detail::dataset_digest(train_), detail::dataset_digest(test_),
                  detail::dataset_digest(target_train_), detail::dataset_digest(target_test_)}},
        {"task", {{"kind", static_cast<int>(task.kind)}, {"margin", task.margin},
                  {"embedding_dim", task.embedding_dim}, {"rotnet_mode", static_cast<int>(task.rotnet_mode)},
                  {"labeled_fraction", task.labeled_fraction}, {"subset_mode", static_cast<int>(task.subset_mode)}}},
        {"imp", {{"rate", cfg_.imp.rate}, {"rewind_samples", cfg_.imp.rewind_samples.value_or(0)},
                 {"depth_limit", cfg_.imp.depth_limit.value_or(-1)}}},
        {"train", detail::train_json(cfg_.imp.train)},
        {"retrain", detail::train_json(cfg_.retrain)},
        {"finetune", detail::train_json(cfg_.finetune)},
        {"probe", {p.epochs, p.batch_size, p.schedule.base_lr, p.schedule.decay_factor, p.schedule.decay_epochs,
                   p.schedule.warmup_epochs, p.momentum, p.weight_decay, p.seed}},
        {"sparsity_epsilon", cfg_.sparsity_epsilon},
        {"sparsity_baseline_margin", cfg_.sparsity_baseline_margin.value_or(-1.0)}};
    return j;
  }

  const ArchSpec& spec() const { return spec_; }
  const Dataset& train_set() const { return train_; }
  const Dataset& test_set() const { return test_; }
  const Dataset& pretext_train_set() const { return pretext_train_; }

  std::uint64_t model_seed(std::uint64_t s) const { return Rng(s).split("model").next_u64(); }
  std::uint64_t cell_seed(const Cell& c) const { return Rng(c.seed).split(c.key()).next_u64(); }
  Model<T> fresh_model(std::uint64_t s) const { return build_model<T>(spec_, model_seed(s)); }

  /// Trained weights of round t and its mask, from disk.
  std::pair<Model<T>, Mask> load_round(std::uint64_t s, int t) const {
    const Cell pc{CellKind::kPretext, s, t, {}};
    if (!done(pc) || !std::filesystem::exists(iter_path(s, t))) {
      throw ValueError("pretext round " + std::to_string(t) + " of seed " + std::to_string(s) +
                       " is missing; run the imp stage first");
    }
    Model<T> m = fresh_model(s);
    Mask mask = restore_checkpoint(read_checkpoint(iter_path(s, t)), m);
    return {std::move(m), std::move(mask)};
  }

  /// Every cell of the grid, in canonical record order.
  std::vector<Cell> grid() const {
    std::vector<Cell> cells;
    for (auto s : cfg_.seeds) {
      for (int t = 0; t <= cfg_.imp.max_iterations; ++t) cells.push_back({CellKind::kPretext, s, t, {}});
      if (cfg_.evaluates("retrain")) {
        for (int t : cfg_.imp.report_iterations) {
          for (const auto& sc : cfg_.init_schemes) cells.push_back({CellKind::kRetrain, s, t, sc});
        }
        if (cfg_.sparsity_baseline_margin) cells.push_back({CellKind::kSparsityBaseline, s, 0, {}});
      }
      if (cfg_.evaluates("probe")) {
        cells.push_back({CellKind::kProbeRandom, s, 0, {}});
        cells.push_back({CellKind::kProbe, s, 0, {}});
        for (int t : cfg_.imp.report_iterations) cells.push_back({CellKind::kProbe, s, t, {}});
      }
      if (cfg_.evaluates("finetune")) {
        for (int t : cfg_.imp.report_iterations) cells.push_back({CellKind::kFinetune, s, t, {}});
      }
      if (cfg_.evaluates("finetune_transfer")) cells.push_back({CellKind::kFinetuneTransfer, s, 0, {}});
    }
    return cells;
  }

  /// Pretext IMP for every seed (resuming from the last completed round).
  void run_pretext() {
    parallel_for(cfg_.seeds.size(), opts_.threads, [&](std::size_t i) { pretext_cell(cfg_.seeds[i]); });
  }

  /// Retrain cells for the given init schemes (all configured ones if empty).
  void run_retrain(const std::vector<std::string>& schemes = {}) {
    const auto wanted = [&](const std::string& scheme) {
      return schemes.empty() || std::find(schemes.begin(), schemes.end(), scheme) != schemes.end();
    };
    run_cells([&](const Cell& c) {
      return (c.kind == CellKind::kRetrain && wanted(c.scheme)) ||
             (c.kind == CellKind::kSparsityBaseline && wanted("sparsity_corrected_random"));
    });
  }

  void run_probe() {
    run_cells([](const Cell& c) { return c.kind == CellKind::kProbe || c.kind == CellKind::kProbeRandom; });
  }

  void run_finetune() {
    run_cells([](const Cell& c) { return c.kind == CellKind::kFinetune || c.kind == CellKind::kFinetuneTransfer; });
  }

  void run_all() {
    run_pretext();
    run_cells([](const Cell& c) { return c.kind != CellKind::kPretext; });
    report();
  }

  /// Rewrites records.csv from the cell files in grid order and writes
  /// summary.json.
  std::vector<ExperimentRecord> report() const {
    std::vector<ExperimentRecord> rows;
    for (const auto& c : grid()) {
      if (!done(c)) continue;
      auto part = load_records(cell_path(c));
      rows.insert(rows.end(), part.begin(), part.end());
    }
    write_text_atomic(out_ / "records.csv", records_to_csv(rows));
    write_text_atomic(out_ / "summary.json", summary_json(summarize(rows)).dump(2) + "\n");
    return rows;
  }

 private:
  void check_fingerprint() const {
    const auto path = out_ / "fingerprint.json";
    const std::string now = fingerprint().dump(1) + "\n";
    if (std::filesystem::exists(path)) {
      if (read_text(path) != now) {
        throw ConfigError("output_dir", out_.string() + " holds results of a different configuration");
      }
      return;
    }
    write_text_atomic(path, now);
  }

  void log(const std::string& msg) const {
    if (opts_.log) opts_.log(msg);
  }

  Dataset pretext_data() const {
    if (cfg_.imp.task.kind != TaskKind::kS4l) return train_;
    const auto split = sample_labeled_subset(
        train_, SubsetSpec{cfg_.imp.task.labeled_fraction, cfg_.imp.task.subset_mode, cfg_.dataset.seed});
    Dataset ds = train_;
    for (auto i : split.unlabeled_index) ds.labels[i] = kHiddenLabel;
    return ds;
  }


  ExperimentRecord row(const Cell& c, double remaining, const std::string& scheme, const std::string& phase,
                       const std::string& split, const std::string& metric, double value) const {
    return {cfg_.experiment_id, c.seed, task_name(cfg_.imp.task.kind), c.iteration, remaining, scheme, phase, split,
            metric, value};
  }

  void commit(const Cell& c, const std::vector<ExperimentRecord>& rows) {
    write_text_atomic(cell_path(c), records_to_csv(rows));
    std::lock_guard lock(records_mutex_);
    append_records(out_ / "records.csv", rows);
  }

  void run_cells(const std::function<bool(const Cell&)>& select) {
    std::vector<Cell> todo;
    for (const auto& c : grid()) {
      if (select(c) && !done(c)) todo.push_back(c);
    }
    parallel_for(todo.size(), opts_.threads, [&](std::size_t i) { run_cell(todo[i]); });
  }

  bool pretext_diverged(std::uint64_t s) const {
    for (int t = 0; t <= cfg_.imp.max_iterations; ++t) {
      const Cell c{CellKind::kPretext, s, t, {}};
      if (!done(c)) return false;
      for (const auto& r : load_records(cell_path(c))) {
        if (r.metric == "diverged") return true;
      }
    }
    return false;
  }

  void pretext_cell(std::uint64_t s) {
    std::filesystem::create_directories(seed_dir(s));
    int last = -1;
    while (last < cfg_.imp.max_iterations && done({CellKind::kPretext, s, last + 1, {}}) &&
           std::filesystem::exists(iter_path(s, last + 1))) {
      ++last;
    }
    if (last == cfg_.imp.max_iterations || pretext_diverged(s)) return;

    ImpConfig imp = cfg_.imp;
    imp.seed = s;
    std::optional<ImpResume<T>> resume;
    if (last >= 0) {
      auto [trained, mask] = load_round(s, last);
      resume = ImpResume<T>{last, std::move(trained), std::move(mask), load_rewind<T>(rewind_path(s), fresh_model(s))};
      log("seed " + std::to_string(s) + ": resuming pretext IMP after round " + std::to_string(last));
    }
    const std::string scheme = "imp";
    auto on_round = [&](const ImpIteration<T>& it, const RewindCheckpoint<T>& rw) {
      const Cell c{CellKind::kPretext, s, it.iteration, {}};
      if (it.iteration == 0) save_rewind(rewind_path(s), rw);
      Mask mask = it.mask;
      save_checkpoint(iter_path(s, it.iteration), it.trained, &mask,
                      {{"iteration", it.iteration}, {"remaining_fraction", it.remaining_fraction}});
      std::vector<ExperimentRecord> rows;
      for (const auto& [metric, value] : it.metrics) {
        rows.push_back(row(c, it.remaining_fraction, scheme, "pretext", metric == "train_loss" ? "train" : "test",
                           metric, value));
      }
      if (it.iteration == 0) {
        const auto sp = natural_sparsity(it.trained.registry(), cfg_.sparsity_epsilon);
        rows.push_back(row(c, 1.0, scheme, "pretext", "train", "natural_sparsity", sp.global_fraction));
      }
      commit(c, rows);
      log("seed " + std::to_string(s) + ": pretext round " + std::to_string(it.iteration) + " done, remaining " +
          format_number(it.remaining_fraction));
    };
    try {
      imp_run<T>(fresh_model(s), pretext_train_, &test_, imp, on_round, std::move(resume));
    } catch (const TrainingDivergence& e) {
      const Cell c{CellKind::kPretext, s, std::max(e.iteration(), 0), {}};
      const double remaining = remaining_fraction_after(spec_.prunable_weights(), imp.rate, c.iteration);
      commit(c, {row(c, remaining, scheme, "pretext", "train", "diverged", 1.0)});
      log("seed " + std::to_string(s) + ": " + e.what());
    }
  }

  void run_cell(const Cell& c) {
    if (pretext_diverged(c.seed)) {
      log("skipping " + c.key() + ": the pretext run diverged");
      return;
    }
    std::vector<ExperimentRecord> rows;
    const std::uint64_t seed = cell_seed(c);
    auto guarded = [&](const std::function<void()>& body, double remaining, const std::string& scheme,
                       const std::string& phase) {
      try {
        body();
      } catch (const TrainingDivergence& e) {
        rows = {row(c, remaining, scheme, phase, "train", "diverged", 1.0)};
        log(c.key() + ": " + e.what());
      }
    };
    switch (c.kind) {
      case CellKind::kRetrain: {
        auto [trained, mask] = load_round(c.seed, c.iteration);
        Subnetwork<T> sub;
        if (c.scheme == "winning_ticket") {
          sub = extract_ticket(mask, load_rewind<T>(rewind_path(c.seed), fresh_model(c.seed)));
        } else if (c.scheme == "random_reinit") {
          sub = random_reinit<T>(mask, spec_, Rng(seed).split("init").next_u64());
        } else if (c.scheme == "random_mask") {
          Model<T> m = build_model<T>(spec_, Rng(seed).split("init").next_u64());
          Mask rm = random_mask(m.registry(), mask.remaining_fraction(), Rng(seed).split("mask").next_u64());
          sub = apply_mask(std::move(m), std::move(rm));
        } else {
          auto [dense, full] = load_round(c.seed, 0);
          Mask sm = sparsity_corrected_random_mask(dense.registry(), mask.remaining_fraction(), cfg_.sparsity_epsilon,
                                                   Rng(seed).split("mask").next_u64());
          sub = apply_mask(build_model<T>(spec_, Rng(seed).split("init").next_u64()), std::move(sm));
        }
        const double remaining = sub.mask.remaining_fraction();
        guarded(
            [&] {
              const auto r = retrain(sub, train_, test_, cfg_.retrain, seed);
              rows.push_back(row(c, remaining, c.scheme, "retrain", "test", "top1", r.top1));
              rows.push_back(row(c, remaining, c.scheme, "retrain", "train", "train_loss", r.train_loss));
            },
            remaining, c.scheme, "retrain");
        break;
      }
      case CellKind::kSparsityBaseline: {
        auto [dense, full] = load_round(c.seed, 0);
        const double natural = natural_sparsity(dense.registry(), cfg_.sparsity_epsilon).global_fraction;
        const double fraction = std::max(1.0 - natural - *cfg_.sparsity_baseline_margin, 1e-6);
        Mask sm = sparsity_corrected_random_mask(dense.registry(), fraction, cfg_.sparsity_epsilon,
                                                 Rng(seed).split("mask").next_u64());
        Subnetwork<T> sub = apply_mask(build_model<T>(spec_, Rng(seed).split("init").next_u64()), std::move(sm));
        const double remaining = sub.mask.remaining_fraction();
        const std::string scheme = "sparsity_corrected_random";
        guarded(
            [&] {
              const auto r = retrain(sub, train_, test_, cfg_.retrain, seed);
              rows.push_back(row(c, remaining, scheme, "retrain", "test", "top1", r.top1));
              rows.push_back(row(c, remaining, scheme, "retrain", "train", "train_loss", r.train_loss));
              rows.push_back(row(c, remaining, scheme, "retrain", "train", "natural_sparsity",
                                 natural_sparsity(sub.model.registry(), cfg_.sparsity_epsilon).global_fraction));
            },
            remaining, scheme, "retrain");
        break;
      }
      case CellKind::kProbe:
      case CellKind::kProbeRandom: {
        Model<T> backbone;
        double remaining = 1.0;
        if (c.kind == CellKind::kProbe) {
          auto [trained, mask] = load_round(c.seed, c.iteration);
          backbone = std::move(trained);
          remaining = mask.remaining_fraction();
        } else {
          backbone = fresh_model(c.seed);
        }
        ProbeConfig pc = cfg_.probe;
        pc.seed = seed;
        const std::string scheme = c.kind == CellKind::kProbe ? "imp" : "random_init";
        guarded(
            [&] {
              const auto r = linear_probe(backbone, target_train_, target_test_, pc);
              rows.push_back(row(c, remaining, scheme, "probe", "test", "top1", r.top1));
              rows.push_back(row(c, remaining, scheme, "probe", "train", "top1", r.train_top1));
            },
            remaining, scheme, "probe");
        break;
      }
      case CellKind::kFinetune: {
        auto [trained, mask] = load_round(c.seed, c.iteration);
        const double remaining = mask.remaining_fraction();
        guarded(
            [&] {
              const auto r = finetune(apply_mask(std::move(trained), std::move(mask)), target_train_, target_test_,
                                      cfg_.finetune, seed);
              rows.push_back(row(c, remaining, "prune_pretext", "finetune", "test", "top1", r.top1));
              rows.push_back(row(c, remaining, "prune_pretext", "finetune", "train", "train_loss", r.train_loss));
            },
            remaining, "prune_pretext", "finetune");
        break;
      }
      case CellKind::kFinetuneTransfer: {
        auto [dense, full] = load_round(c.seed, 0);
        ImpConfig imp = cfg_.imp;
        imp.train = cfg_.finetune;
        imp.seed = seed;
        imp.rewind_samples.reset();
        guarded(
            [&] {
              for (const auto& p : finetune_prune_during_transfer(dense, target_train_, target_test_, imp)) {
                if (p.iteration != 0 && !imp.reports(p.iteration)) continue;
                Cell pc = c;
                pc.iteration = p.iteration;
                rows.push_back(row(pc, p.remaining_fraction, "prune_transfer", "finetune", "test", "top1", p.top1));
              }
            },
            1.0, "prune_transfer", "finetune");
        break;
      }
      case CellKind::kPretext:
        throw ValueError("pretext cells run through run_pretext");
    }
    commit(c, rows);
    log(c.key() + " done");
  }

  ExperimentConfig cfg_;
  std::filesystem::path out_;
  RunOptions opts_;
  Dataset train_, test_, target_train_, target_test_, pretext_train_;
  ArchSpec spec_;
  std::mutex records_mutex_;
};

}  // namespace ts
