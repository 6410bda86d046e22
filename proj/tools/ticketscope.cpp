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

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ticketscope/harness/runner.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_path;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string precision;
  bool quiet = false;

  // subcommand arguments
  int iteration = 1;
  std::vector<std::string> schemes;
  std::string checkpoint;
  double epsilon = ts::kDefaultSparsityEpsilon;
  std::string report_path;
  std::string format = "idx";
};

void log_line(const std::string& msg) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%H:%M:%S", std::localtime(&now));
  std::fprintf(stderr, "[%s] %s\n", stamp, msg.c_str());
}

ts::ExperimentConfig resolve_config(const Options& o) {
  ts::ExperimentConfig cfg;
  if (!o.config_path.empty()) {
    cfg = ts::load_config(o.config_path);
  } else if (!o.preset.empty()) {
    cfg = ts::parse_config({{"preset", o.preset}});
  } else {
    cfg = ts::parse_config(nlohmann::json::object());
  }
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (!o.precision.empty()) cfg.precision = o.precision;
  cfg.validate();
  return cfg;
}

/// Adds the requested schemes (or the configured ones from `family`, or the
/// whole family) to the grid and returns them.
std::vector<std::string> pick_schemes(ts::ExperimentConfig& cfg, const std::vector<std::string>& requested,
                                      const std::vector<std::string>& family) {
  std::vector<std::string> chosen = requested;
  if (chosen.empty()) {
    for (const auto& s : cfg.init_schemes) {
      if (std::find(family.begin(), family.end(), s) != family.end()) chosen.push_back(s);
    }
  }
  if (chosen.empty()) chosen = family;
  for (const auto& s : chosen) {
    if (std::find(cfg.init_schemes.begin(), cfg.init_schemes.end(), s) == cfg.init_schemes.end()) {
      cfg.init_schemes.push_back(s);
    }
  }
  if (!cfg.evaluates("retrain")) cfg.evaluations.push_back("retrain");
  cfg.validate();
  return chosen;
}

void ensure_evaluation(ts::ExperimentConfig& cfg, const std::string& e) {
  if (!cfg.evaluates(e)) cfg.evaluations.push_back(e);
}

void print_summary(const std::vector<ts::ExperimentRecord>& rows) {
  std::printf("%-10s %4s %9s %-26s %-9s %-6s %-16s %10s %10s %3s\n", "task", "iter", "remaining", "init_scheme",
              "phase", "split", "metric", "mean", "stderr", "n");
  for (const auto& c : ts::summarize(rows)) {
    std::printf("%-10s %4d %9.5f %-26s %-9s %-6s %-16s %10.5f %10.5f %3zu\n", c.task.c_str(), c.prune_iteration,
                c.remaining_fraction, c.init_scheme.c_str(), c.phase.c_str(), c.split.c_str(), c.metric.c_str(),
                c.mean, c.stderr_, c.n);
  }
}

void synth_data(const ts::ExperimentConfig& cfg, const Options& o) {
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  auto write = [&](const ts::DatasetConfig& dc, const std::string& prefix) {
    if (dc.source != "synthetic") throw ts::ConfigError("dataset.source", "synth-data needs a synthetic dataset");
    const auto [tr, te] = dc.load();
    if (o.format == "idx") {
      ts::write_idx(tr, out / (prefix + "train-images.idx"), out / (prefix + "train-labels.idx"));
      ts::write_idx(te, out / (prefix + "test-images.idx"), out / (prefix + "test-labels.idx"));
    } else {
      ts::write_cifar_binary(tr, out / (prefix + "train.bin"));
      ts::write_cifar_binary(te, out / (prefix + "test.bin"));
    }
    log_line("wrote " + std::to_string(tr.size()) + " train and " + std::to_string(te.size()) + " test images (" +
             prefix + o.format + ") to " + out.string());
  };
  write(cfg.dataset, "");
  if (cfg.transfer) write(*cfg.transfer, "transfer-");
}

template <class T>
int train_dense(ts::ExperimentRunner<T>& runner) {
  const auto& cfg = runner.config();
  nlohmann::json out = nlohmann::json::array();
  for (auto s : cfg.seeds) {
    ts::Model<T> model = runner.fresh_model(s);
    ts::attach_heads(model, cfg.imp.task, ts::Rng(s).split("heads").next_u64());
    const auto stats = ts::train(model, nullptr, runner.pretext_train_set(), cfg.imp.task, cfg.imp.train,
                                 cfg.imp.round_seed(0));
    fs::create_directories(runner.seed_dir(s));
    const fs::path path = runner.seed_dir(s) / "dense.ckpt";
    ts::save_checkpoint(path, model, nullptr);
    auto metrics = ts::task_metrics(model, cfg.imp.task, &runner.test_set(), stats.last_epoch_loss);
    metrics["natural_sparsity"] = ts::natural_sparsity(model.registry(), cfg.sparsity_epsilon).global_fraction;
    out.push_back({{"seed", s}, {"checkpoint", path.string()}, {"metrics", metrics}});
    log_line("seed " + std::to_string(s) + ": dense model written to " + path.string());
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

template <class T>
int write_tickets(ts::ExperimentRunner<T>& runner, int t) {
  nlohmann::json out = nlohmann::json::array();
  for (auto s : runner.config().seeds) {
    auto [trained, mask] = runner.load_round(s, t);
    const auto rewind = ts::load_rewind<T>(runner.rewind_path(s), runner.fresh_model(s));
    const auto ticket = ts::extract_ticket(mask, rewind);
    const fs::path path = runner.seed_dir(s) / ("ticket" + std::to_string(t) + ".ckpt");
    ts::save_checkpoint(path, ticket.model, &ticket.mask, {{"samples", static_cast<double>(rewind.samples)}});
    out.push_back({{"seed", s},
                   {"iteration", t},
                   {"remaining_fraction", ticket.mask.remaining_fraction()},
                   {"rewind_samples", rewind.samples},
                   {"checkpoint", path.string()}});
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

template <class T>
int dispatch(const std::string& command, ts::ExperimentConfig cfg, const Options& o) {
  if (command == "baseline" || command == "retrain") {
    const std::vector<std::string> family = command == "retrain"
                                                ? std::vector<std::string>{"winning_ticket", "random_reinit"}
                                                : std::vector<std::string>{"random_mask", "sparsity_corrected_random"};
    const auto schemes = pick_schemes(cfg, o.schemes, family);
    ts::ExperimentRunner<T> runner(cfg, cfg.output_dir, {ts::threads_from_env(), o.quiet ? nullptr : log_line});
    runner.run_retrain(schemes);
    print_summary(runner.report());
    return 0;
  }
  if (command == "probe") ensure_evaluation(cfg, "probe");
  if (command == "finetune") {
    ensure_evaluation(cfg, "finetune");
    ensure_evaluation(cfg, "finetune_transfer");
  }
  ts::ExperimentRunner<T> runner(cfg, cfg.output_dir, {ts::threads_from_env(), o.quiet ? nullptr : log_line});
  if (command == "train") return train_dense(runner);
  if (command == "ticket") return write_tickets(runner, o.iteration);
  if (command == "imp") runner.run_pretext();
  if (command == "probe") runner.run_probe();
  if (command == "finetune") runner.run_finetune();
  if (command == "run") {
    runner.run_all();
  }
  const auto rows = runner.report();
  if (command == "report" && !o.report_path.empty()) {
    ts::write_text_atomic(o.report_path, ts::summary_json(ts::summarize(rows)).dump(2) + "\n");
  }
  print_summary(rows);
  return 0;
}

int sparsity(const Options& o) {
  const auto rep = ts::sparsity_report(o.checkpoint, o.epsilon);
  const std::string text = ts::to_json(rep).dump(2) + "\n";
  if (o.report_path.empty()) {
    std::cout << text;
  } else {
    ts::write_text_atomic(o.report_path, text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ticketscope: lottery tickets under supervised and self-supervised pretext tasks"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--preset", o.preset, "start from a named preset instead of a config file")
      ->excludes("--config")
      ->check(CLI::IsMember(ts::preset_names()));
  app.add_option("--seed", o.seed, "run a single seed");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--precision", o.precision, "floating precision")->check(CLI::IsMember({"f32", "f64"}));
  app.add_flag("-q,--quiet", o.quiet, "no progress log on stderr");

  auto* synth = app.add_subcommand("synth-data", "write the configured synthetic datasets as IDX or CIFAR binary");
  synth->add_option("--format", o.format)->check(CLI::IsMember({"idx", "cifar"}));
  app.add_subcommand("train", "train dense models on the pretext task");
  app.add_subcommand("imp", "iterative magnitude pruning on the pretext task");
  auto* ticket = app.add_subcommand("ticket", "extract the winning ticket of an IMP round");
  ticket->add_option("-t,--iteration", o.iteration, "IMP round")->check(CLI::NonNegativeNumber);
  auto* retrain = app.add_subcommand("retrain", "retrain pruned masks on labels (winning_ticket, random_reinit)");
  retrain->add_option("--scheme", o.schemes)->check(CLI::IsMember(ts::kInitSchemes));
  auto* baseline = app.add_subcommand("baseline", "random baselines (random_mask, sparsity_corrected_random)");
  baseline->add_option("--scheme", o.schemes)->check(CLI::IsMember(ts::kInitSchemes));
  app.add_subcommand("probe", "linear probes on frozen pruned features");
  app.add_subcommand("finetune", "finetune pruned networks on the target labels");
  auto* sp = app.add_subcommand("sparsity", "natural sparsity of a checkpoint");
  sp->add_option("checkpoint", o.checkpoint)->required()->check(CLI::ExistingFile);
  sp->add_option("--epsilon", o.epsilon, "magnitude threshold")->check(CLI::NonNegativeNumber);
  sp->add_option("-o,--output", o.report_path, "write the JSON here instead of stdout");
  auto* report = app.add_subcommand("report", "rebuild records.csv and summary.json from completed cells");
  report->add_option("-o,--output", o.report_path, "also write the summary JSON here");
  app.add_subcommand("run", "the whole configured grid");

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "sparsity") return sparsity(o);
    const auto cfg = resolve_config(o);
    if (command == "synth-data") {
      synth_data(cfg, o);
      return 0;
    }
    return cfg.precision == "f64" ? dispatch<double>(command, cfg, o) : dispatch<float>(command, cfg, o);
  } catch (const ts::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
