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
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ticketscope/data/formats.hpp"
#include "ticketscope/data/synthetic.hpp"
#include "ticketscope/eval/transfer.hpp"
#include "ticketscope/harness/records.hpp"
#include "ticketscope/pruning/sparsity.hpp"

namespace ts {

/// Where images come from: the synthetic renderer, IDX files or CIFAR-10
/// binary batches. Relative paths resolve against the config file.
struct DatasetConfig {
  std::string source = "synthetic";
  std::size_t train_size = 5000;
  std::size_t test_size = 2000;
  std::size_t classes = 10;
  std::size_t image_size = 16;
  std::uint64_t seed = 1234;
  SyntheticStyle style;
  std::string train_images, train_labels, test_images, test_labels;
  std::vector<std::string> train_files;
  std::string test_file;

  std::pair<Dataset, Dataset> load(const std::filesystem::path& base = {}) const {
    auto at = [&](const std::string& p) { return base.empty() ? std::filesystem::path(p) : base / p; };
    Dataset tr, te;
    if (source == "synthetic") {
      tr = generate_synthetic(train_size, classes, image_size, Rng(seed).split("train").next_u64(), style);
      te = generate_synthetic(test_size, classes, image_size, Rng(seed).split("test").next_u64(), style);
    } else if (source == "idx") {
      tr = load_idx(at(train_images), at(train_labels), classes);
      te = load_idx(at(test_images), at(test_labels), classes);
    } else if (source == "cifar") {
      for (const auto& f : train_files) {
        Dataset part = load_cifar_binary(at(f), classes);
        tr = tr.size() ? concat(tr, part) : part;
      }
      te = load_cifar_binary(at(test_file), classes);
    } else {
      throw ConfigError("dataset.source", "unknown source '" + source + "'");
    }
    tr.split = "train";
    te.split = "test";
    return {std::move(tr), std::move(te)};
  }
};

inline const std::vector<std::string> kInitSchemes{"winning_ticket", "random_reinit", "random_mask",
                                                   "sparsity_corrected_random"};
inline const std::vector<std::string> kEvaluations{"retrain", "probe", "finetune", "finetune_transfer"};

/// One experiment grid: pretext IMP per seed, then the requested evaluations
/// of every reported mask.
struct ExperimentConfig {
  std::string experiment_id = "experiment";
  std::string precision = "f32";
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string output_dir = "runs/experiment";
  DatasetConfig dataset;
  std::optional<DatasetConfig> transfer;  // probe and finetune target; defaults to `dataset`
  std::string arch = "mini_conv";
  std::vector<std::size_t> widths;        // empty: the preset widths of `arch`
  ImpConfig imp;
  std::vector<std::string> init_schemes{"winning_ticket", "random_reinit"};
  std::vector<std::string> evaluations{"retrain"};
  TrainConfig retrain;
  ProbeConfig probe;
  TrainConfig finetune;
  double sparsity_epsilon = kDefaultSparsityEpsilon;
  /// When set, each seed also retrains a sparsity-corrected random mask that
  /// keeps (1 - natural sparsity of the dense model) - margin of the weights.
  std::optional<double> sparsity_baseline_margin;
  std::filesystem::path base_dir;  // directory of the config file

  ArchSpec arch_spec(const Dataset& ds) const {
    ArchSpec s = ArchSpec::preset(arch);
    if (!widths.empty()) s.widths = widths;
    s.in_channels = ds.channels;
    s.height = ds.height;
    s.width = ds.width;
    s.num_classes = ds.class_count;
    return s;
  }

  bool evaluates(const std::string& e) const {
    return std::find(evaluations.begin(), evaluations.end(), e) != evaluations.end();
  }

  void validate() const {
    if (experiment_id.empty() || experiment_id.find_first_of(",/\\\n") != std::string::npos) {
      throw ConfigError("experiment_id", "must be a non-empty name without ',' or path separators");
    }
    if (precision != "f32" && precision != "f64") throw ConfigError("precision", "expected f32 or f64");
    if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
      throw ConfigError("seeds", "seeds must be distinct");
    }
    if (arch != "mini_conv" && arch != "mini_vgg") throw ConfigError("arch.name", "unknown architecture '" + arch + "'");
    if (!widths.empty() && widths.size() != 3) throw ConfigError("arch.widths", "expected 3 block widths");
    for (const auto& s : init_schemes) {
      if (std::find(kInitSchemes.begin(), kInitSchemes.end(), s) == kInitSchemes.end()) {
        throw ConfigError("init_schemes", "unknown scheme '" + s + "'");
      }
    }
    for (const auto& e : evaluations) {
      if (std::find(kEvaluations.begin(), kEvaluations.end(), e) == kEvaluations.end()) {
        throw ConfigError("evaluations", "unknown evaluation '" + e + "'");
      }
    }
    if (!(sparsity_epsilon > 0)) throw ConfigError("sparsity_epsilon", "must be positive");
    if (sparsity_baseline_margin && !(*sparsity_baseline_margin >= 0 && *sparsity_baseline_margin < 1)) {
      throw ConfigError("sparsity_baseline_margin", "must be in [0, 1)");
    }
    imp.validate();
    retrain.validate();
    finetune.validate();
  }
};

namespace detail {

/// Typed access to one JSON object; every key read is recorded so that
/// unknown keys can be reported by their full path.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  bool has(const std::string& k) const { return j_.contains(k); }

  template <class V>
  void get(const std::string& k, V& out) {
    if (!j_.contains(k)) return;
    used_.insert(k);
    const auto& v = j_.at(k);
    if (v.is_null()) return;
    try {
      if constexpr (std::is_same_v<V, bool>) {
        if (!v.is_boolean()) throw ConfigError(key(k), "expected true or false");
      } else if constexpr (std::is_integral_v<V>) {
        if (!v.is_number_integer()) throw ConfigError(key(k), "expected an integer");
        if (std::is_unsigned_v<V> && v.get<long long>() < 0 && !v.is_number_unsigned()) {
          throw ConfigError(key(k), "must be non-negative");
        }
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!v.is_number()) throw ConfigError(key(k), "expected a number");
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!v.is_string()) throw ConfigError(key(k), "expected a string");
      } else {
        if (!v.is_array()) throw ConfigError(key(k), "expected an array");
        for (const auto& e : v) {
          using E = typename V::value_type;
          if constexpr (std::is_same_v<E, std::string>) {
            if (!e.is_string()) throw ConfigError(key(k), "expected an array of strings");
          } else if constexpr (std::is_integral_v<E>) {
            if (!e.is_number_integer() || (std::is_unsigned_v<E> && e.get<long long>() < 0 && !e.is_number_unsigned())) {
              throw ConfigError(key(k), "expected an array of non-negative integers");
            }
          } else {
            if (!e.is_number()) throw ConfigError(key(k), "expected an array of numbers");
          }
        }
      }
      out = v.get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(key(k), e.what());
    }
  }

  template <class V>
  void get(const std::string& k, std::optional<V>& out) {
    if (!j_.contains(k)) return;
    if (j_.at(k).is_null()) {
      used_.insert(k);
      out.reset();
      return;
    }
    V v{};
    get(k, v);
    out = v;
  }

  void skip(const std::string& k) { used_.insert(k); }

  Section sub(const std::string& k) {
    used_.insert(k);
    return Section(j_.at(k), key(k));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(key(it.key()), "unknown key");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline void read_style(Section s, SyntheticStyle& st) {
  s.get("family", st.family);
  s.get("strokes", st.strokes);
  s.get("stroke_width", st.stroke_width);
  s.get("scale_jitter", st.scale_jitter);
  s.get("shift_jitter", st.shift_jitter);
  s.get("rotation_jitter_deg", st.rotation_jitter_deg);
  s.get("hue_jitter", st.hue_jitter);
  s.get("pixel_noise", st.pixel_noise);
  s.get("class_similarity", st.class_similarity);
  s.finish();
}

inline void read_dataset(Section s, DatasetConfig& d) {
  s.get("source", d.source);
  s.get("train_size", d.train_size);
  s.get("test_size", d.test_size);
  s.get("classes", d.classes);
  s.get("image_size", d.image_size);
  s.get("seed", d.seed);
  s.get("train_images", d.train_images);
  s.get("train_labels", d.train_labels);
  s.get("test_images", d.test_images);
  s.get("test_labels", d.test_labels);
  s.get("train_files", d.train_files);
  s.get("test_file", d.test_file);
  if (s.has("style")) read_style(s.sub("style"), d.style);
  s.finish();
  if (d.source != "synthetic" && d.source != "idx" && d.source != "cifar") {
    throw ConfigError(s.key("source"), "expected synthetic, idx or cifar");
  }
  if (d.source == "synthetic") {
    if (d.train_size < 2) throw ConfigError(s.key("train_size"), "must be at least 2");
    if (d.test_size < 1) throw ConfigError(s.key("test_size"), "must be positive");
    if (d.classes < 2) throw ConfigError(s.key("classes"), "must be at least 2");
    if (d.image_size < 8) throw ConfigError(s.key("image_size"), "must be at least 8");
    if (!(d.style.class_similarity >= 0 && d.style.class_similarity < 1)) {
      throw ConfigError(s.key("style.class_similarity"), "must be in [0, 1)");
    }
  }
}

inline void read_train(Section s, TrainConfig& t) {
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("lr", t.schedule.base_lr);
  s.get("decay_epochs", t.schedule.decay_epochs);
  s.get("decay_factor", t.schedule.decay_factor);
  s.get("warmup_epochs", t.schedule.warmup_epochs);
  s.get("momentum", t.momentum);
  s.get("weight_decay", t.weight_decay);
  std::string aug;
  s.get("augment", aug);
  if (!aug.empty()) {
    try {
      t.augment = AugmentPolicy::parse(aug);
    } catch (const ValueError&) {
      throw ConfigError(s.key("augment"), "expected none, standard or exemplar");
    }
  }
  s.finish();
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(s.key(e.key()), e.reason());
  }
}

inline void read_probe(Section s, ProbeConfig& p) {
  s.get("epochs", p.epochs);
  s.get("batch_size", p.batch_size);
  s.get("lr", p.schedule.base_lr);
  s.get("decay_epochs", p.schedule.decay_epochs);
  s.get("decay_factor", p.schedule.decay_factor);
  s.get("momentum", p.momentum);
  s.get("weight_decay", p.weight_decay);
  s.finish();
  if (p.batch_size < 1) throw ConfigError(s.key("batch_size"), "must be positive");
  if (!(p.schedule.base_lr > 0)) throw ConfigError(s.key("lr"), "must be positive");
}

inline void read_task(Section s, TaskObjective& t) {
  std::string kind = task_name(t.kind), rmode = t.rotnet_mode == RotnetMode::kAllFour ? "all_four" : "sampled",
              smode = t.subset_mode == SubsetMode::kPerClass ? "per_class" : "by_class";
  s.get("kind", kind);
  s.get("margin", t.margin);
  s.get("embedding_dim", t.embedding_dim);
  s.get("rotnet_mode", rmode);
  s.get("labeled_fraction", t.labeled_fraction);
  s.get("subset_mode", smode);
  s.finish();
  try {
    t.kind = parse_task(kind);
  } catch (const ValueError& e) {
    throw ConfigError(s.key("kind"), e.what());
  }
  try {
    t.rotnet_mode = parse_rotnet_mode(rmode);
  } catch (const ValueError& e) {
    throw ConfigError(s.key("rotnet_mode"), e.what());
  }
  try {
    t.subset_mode = parse_subset_mode(smode);
  } catch (const ValueError& e) {
    throw ConfigError(s.key("subset_mode"), e.what());
  }
  if (!(t.margin > 0)) throw ConfigError(s.key("margin"), "must be positive");
  if (t.embedding_dim == 0) throw ConfigError(s.key("embedding_dim"), "must be positive");
  if (!(t.labeled_fraction > 0 && t.labeled_fraction <= 1)) {
    throw ConfigError(s.key("labeled_fraction"), "must be in (0, 1]");
  }
}

inline void read_imp(Section s, ImpConfig& imp) {
  s.get("rate", imp.rate);
  s.get("max_iterations", imp.max_iterations);
  s.get("rewind_samples", imp.rewind_samples);
  s.get("report_iterations", imp.report_iterations);
  s.get("depth_limit", imp.depth_limit);
  s.finish();
}

}  // namespace detail

/// Named starting points; a config file selects one with "preset" and
/// overrides any key (JSON merge patch).
inline nlohmann::json config_preset(const std::string& name) {
  using nlohmann::json;
  const json desk_data = {{"source", "synthetic"}, {"train_size", 5000}, {"test_size", 2000}, {"classes", 10},
                          {"image_size", 16}, {"seed", 1234},
                          {"style", {{"class_similarity", 0.85}}}};
  const json desk_train = {{"epochs", 8}, {"batch_size", 64}, {"lr", 0.05}, {"decay_epochs", json::array({5, 7})},
                           {"decay_factor", 10.0}, {"momentum", 0.9}, {"weight_decay", 5e-4},
                           {"augment", "standard"}};
  const json desk_probe = {{"epochs", 30}, {"batch_size", 128}, {"lr", 0.05}, {"decay_epochs", json::array({20, 26})},
                           {"weight_decay", 1e-4}};
  json desk = {{"experiment_id", name},
               {"precision", "f32"},
               {"seeds", json::array({0, 1, 2})},
               {"output_dir", "runs/" + name},
               {"dataset", desk_data},
               {"arch", {{"name", "mini_conv"}}},
               {"task", {{"kind", "labels"}}},
               {"train", desk_train},
               {"imp", {{"rate", 0.2}, {"max_iterations", 14}, {"report_iterations", json::array({2, 7, 14})}}},
               {"init_schemes", json::array({"winning_ticket", "random_reinit", "random_mask"})},
               {"evaluations", json::array({"retrain"})},
               {"retrain", desk_train},
               {"probe", desk_probe},
               {"finetune", desk_train}};
  if (name == "desk_labels") return desk;
  if (name == "desk_rotnet") {
    desk["task"]["kind"] = "rotnet";
    desk["train"]["epochs"] = 5;
    desk["train"]["decay_epochs"] = json::array({3, 4});
    desk["imp"]["max_iterations"] = 21;
    desk["imp"]["report_iterations"] = json::array({2, 7, 10, 14, 21});
    desk["evaluations"] = json::array({"retrain", "probe"});
    return desk;
  }
  if (name == "desk_exemplar") {
    desk["task"] = {{"kind", "exemplar"}, {"margin", 0.5}, {"embedding_dim", 64}};
    desk["train"]["augment"] = "none";
    desk["evaluations"] = json::array({"retrain", "probe"});
    return desk;
  }
  if (name == "desk_s4l") {
    desk["task"] = {{"kind", "s4l"}, {"labeled_fraction", 0.1}, {"subset_mode", "per_class"}};
    desk["train"]["epochs"] = 5;
    desk["train"]["decay_epochs"] = json::array({3, 4});
    return desk;
  }
  if (name == "desk_transfer") {
    desk["task"]["kind"] = "rotnet";
    desk["train"]["epochs"] = 5;
    desk["train"]["decay_epochs"] = json::array({3, 4});
    desk["imp"]["max_iterations"] = 6;
    desk["imp"]["report_iterations"] = json::array({6});
    desk["transfer"] = desk_data;
    desk["transfer"]["seed"] = 4321;
    desk["transfer"]["style"]["family"] = 1;
    desk["init_schemes"] = json::array();
    desk["evaluations"] = json::array({"probe", "finetune", "finetune_transfer"});
    return desk;
  }
  if (name == "desk_sparsity") {
    desk["arch"]["name"] = "mini_vgg";
    desk["dataset"].erase("style");
    desk["train"] = {{"epochs", 70}, {"batch_size", 32}, {"lr", 0.1}, {"decay_epochs", json::array({56, 65})},
                     {"decay_factor", 10.0}, {"momentum", 0.9}, {"weight_decay", 1e-2}, {"augment", "standard"}};
    desk["retrain"] = desk["train"];
    desk["imp"]["max_iterations"] = 0;
    desk["imp"]["report_iterations"] = json::array();
    desk["init_schemes"] = json::array();
    desk["sparsity_baseline_margin"] = 0.001;
    return desk;
  }
  if (name == "smoke") {
    const json tiny_train = {{"epochs", 1}, {"batch_size", 16}, {"lr", 0.05}, {"momentum", 0.9},
                             {"weight_decay", 5e-4}, {"augment", "standard"}};
    return {{"experiment_id", "smoke"},
            {"precision", "f32"},
            {"seeds", json::array({0})},
            {"output_dir", "runs/smoke"},
            {"dataset", {{"source", "synthetic"}, {"train_size", 96}, {"test_size", 40}, {"classes", 10},
                         {"image_size", 8}, {"seed", 5}}},
            {"arch", {{"name", "mini_conv"}, {"widths", json::array({4, 6, 8})}}},
            {"task", {{"kind", "labels"}}},
            {"train", tiny_train},
            {"imp", {{"rate", 0.2}, {"max_iterations", 3}, {"rewind_samples", 32},
                     {"report_iterations", json::array({1, 3})}}},
            {"init_schemes", json::array({"winning_ticket", "random_reinit"})},
            {"evaluations", json::array({"retrain"})},
            {"retrain", tiny_train},
            {"probe", {{"epochs", 2}, {"batch_size", 32}, {"lr", 0.05}}},
            {"finetune", tiny_train}};
  }
  throw ConfigError("preset", "unknown preset '" + name + "'");
}

inline std::vector<std::string> preset_names() {
  return {"smoke", "desk_labels", "desk_rotnet", "desk_exemplar", "desk_s4l", "desk_transfer", "desk_sparsity"};
}

/// Builds a config from JSON. A "preset" key selects the base document that
/// the rest of the object patches. Unknown keys and bad values raise
/// ConfigError naming the key.
inline ExperimentConfig parse_config(nlohmann::json doc) {
  if (!doc.is_object()) throw ConfigError("<root>", "expected an object");
  if (doc.contains("preset")) {
    if (!doc["preset"].is_string()) throw ConfigError("preset", "expected a string");
    nlohmann::json base = config_preset(doc["preset"].get<std::string>());
    doc.erase("preset");
    base.merge_patch(doc);
    doc = std::move(base);
  }
  ExperimentConfig c;
  detail::Section root(doc, "");
  root.get("experiment_id", c.experiment_id);
  root.get("precision", c.precision);
  root.get("seeds", c.seeds);
  root.get("output_dir", c.output_dir);
  if (root.has("dataset")) detail::read_dataset(root.sub("dataset"), c.dataset);
  if (root.has("transfer") && !doc["transfer"].is_null()) {
    DatasetConfig t;
    detail::read_dataset(root.sub("transfer"), t);
    c.transfer = t;
  } else {
    root.skip("transfer");
  }
  if (root.has("arch")) {
    auto a = root.sub("arch");
    a.get("name", c.arch);
    a.get("widths", c.widths);
    a.finish();
  }
  if (root.has("task")) detail::read_task(root.sub("task"), c.imp.task);
  if (root.has("train")) detail::read_train(root.sub("train"), c.imp.train);
  c.retrain = c.imp.train;
  c.finetune = c.imp.train;
  if (root.has("imp")) detail::read_imp(root.sub("imp"), c.imp);
  root.get("init_schemes", c.init_schemes);
  root.get("evaluations", c.evaluations);
  if (root.has("retrain")) detail::read_train(root.sub("retrain"), c.retrain);
  if (root.has("probe")) detail::read_probe(root.sub("probe"), c.probe);
  if (root.has("finetune")) detail::read_train(root.sub("finetune"), c.finetune);
  root.get("sparsity_epsilon", c.sparsity_epsilon);
  root.get("sparsity_baseline_margin", c.sparsity_baseline_margin);
  root.finish();
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<file>", path.string() + ": " + e.what());
  }
  ExperimentConfig c = parse_config(std::move(doc));
  c.base_dir = path.parent_path();
  return c;
}

}  // namespace ts
