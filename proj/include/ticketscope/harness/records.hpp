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

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "ticketscope/core/error.hpp"

namespace ts {

/// One measured value of one experiment cell.
struct ExperimentRecord {
  std::string experiment_id;
  std::uint64_t seed = 0;
  std::string task;
  int prune_iteration = 0;
  double remaining_fraction = 1.0;
  std::string init_scheme;
  std::string phase;  // pretext | retrain | probe | finetune
  std::string split;  // train | test
  std::string metric;
  double value = 0.0;

  friend bool operator==(const ExperimentRecord&, const ExperimentRecord&) = default;
};

inline const char* const kRecordHeader =
    "experiment_id,seed,task,prune_iteration,remaining_fraction,init_scheme,phase,split,metric,value";

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void check_record(const ExperimentRecord& r) {
  if (!(r.remaining_fraction > 0.0 && r.remaining_fraction <= 1.0)) {
    throw ValueError("record " + r.metric + ": remaining_fraction " + format_number(r.remaining_fraction) +
                     " outside (0, 1]");
  }
  if (!std::isfinite(r.value)) throw ValueError("record " + r.metric + ": value is not finite");
  for (const std::string* s : {&r.experiment_id, &r.task, &r.init_scheme, &r.phase, &r.split, &r.metric}) {
    if (s->find_first_of(",\n\r\"") != std::string::npos) throw ValueError("record field '" + *s + "' holds a separator");
  }
}

inline std::string to_csv_row(const ExperimentRecord& r) {
  check_record(r);
  std::string s;
  s += r.experiment_id + ',' + std::to_string(r.seed) + ',' + r.task + ',' + std::to_string(r.prune_iteration) + ',';
  s += format_number(r.remaining_fraction) + ',' + r.init_scheme + ',' + r.phase + ',' + r.split + ',' + r.metric + ',';
  s += format_number(r.value);
  return s;
}

inline ExperimentRecord parse_csv_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) f.push_back(cell);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  if (f.size() != 10) throw FormatError("records: expected 10 fields, got " + std::to_string(f.size()) + ": " + line);
  try {
    std::size_t pos = 0;
    ExperimentRecord r;
    r.experiment_id = f[0];
    r.seed = std::stoull(f[1], &pos);
    r.task = f[2];
    r.prune_iteration = std::stoi(f[3]);
    r.remaining_fraction = std::stod(f[4]);
    r.init_scheme = f[5];
    r.phase = f[6];
    r.split = f[7];
    r.metric = f[8];
    r.value = std::stod(f[9]);
    check_record(r);
    return r;
  } catch (const std::logic_error&) {
    throw FormatError("records: malformed number in row: " + line);
  } catch (const ValueError& e) {
    throw FormatError(std::string("records: ") + e.what());
  }
}

inline std::string records_to_csv(const std::vector<ExperimentRecord>& rows) {
  std::string out = std::string(kRecordHeader) + '\n';
  for (const auto& r : rows) out += to_csv_row(r) + '\n';
  return out;
}

inline std::vector<ExperimentRecord> parse_records(const std::string& text, const std::string& origin = "records") {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line) || line != kRecordHeader) throw FormatError(origin + ": missing or wrong CSV header");
  std::vector<ExperimentRecord> rows;
  while (std::getline(ss, line)) {
    if (!line.empty()) rows.push_back(parse_csv_row(line));
  }
  return rows;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary file and rename, so readers never see a partial file.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out << text;
    if (!out) throw Error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<ExperimentRecord> load_records(const std::filesystem::path& path) {
  return parse_records(read_text(path), path.string());
}

/// Appends rows to a CSV file, writing the header first if the file is new.
inline void append_records(const std::filesystem::path& path, const std::vector<ExperimentRecord>& rows) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot append to " + path.string());
  if (fresh) out << kRecordHeader << '\n';
  for (const auto& r : rows) out << to_csv_row(r) << '\n';
  out.flush();
}

struct SummaryCell {
  std::string experiment_id, task, init_scheme, phase, split, metric;
  int prune_iteration = 0;
  double remaining_fraction = 0.0;  // mean over seeds
  std::size_t n = 0;
  double mean = 0.0;
  double stderr_ = 0.0;  // sample sd / sqrt(n); 0 for n = 1
  std::vector<double> values;
};

/// Mean and standard error over seeds of every (experiment, task, iteration,
/// scheme, phase, split, metric) cell, in first-appearance order.
inline std::vector<SummaryCell> summarize(const std::vector<ExperimentRecord>& rows) {
  using Key = std::tuple<std::string, std::string, int, std::string, std::string, std::string, std::string>;
  std::map<Key, std::size_t> index;
  std::vector<SummaryCell> cells;
  std::vector<double> frac_sum;
  for (const auto& r : rows) {
    const Key k{r.experiment_id, r.task, r.prune_iteration, r.init_scheme, r.phase, r.split, r.metric};
    auto [it, inserted] = index.emplace(k, cells.size());
    if (inserted) {
      SummaryCell c;
      c.experiment_id = r.experiment_id;
      c.task = r.task;
      c.prune_iteration = r.prune_iteration;
      c.init_scheme = r.init_scheme;
      c.phase = r.phase;
      c.split = r.split;
      c.metric = r.metric;
      cells.push_back(c);
      frac_sum.push_back(0.0);
    }
    cells[it->second].values.push_back(r.value);
    frac_sum[it->second] += r.remaining_fraction;
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto& c = cells[i];
    c.n = c.values.size();
    double s = 0;
    for (double v : c.values) s += v;
    c.mean = s / static_cast<double>(c.n);
    c.remaining_fraction = frac_sum[i] / static_cast<double>(c.n);
    if (c.n > 1) {
      double ss = 0;
      for (double v : c.values) ss += (v - c.mean) * (v - c.mean);
      c.stderr_ = std::sqrt(ss / static_cast<double>(c.n - 1)) / std::sqrt(static_cast<double>(c.n));
    }
  }
  return cells;
}

inline nlohmann::json summary_json(const std::vector<SummaryCell>& cells) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : cells) {
    arr.push_back({{"experiment_id", c.experiment_id},
                   {"task", c.task},
                   {"prune_iteration", c.prune_iteration},
                   {"remaining_fraction", c.remaining_fraction},
                   {"init_scheme", c.init_scheme},
                   {"phase", c.phase},
                   {"split", c.split},
                   {"metric", c.metric},
                   {"n", c.n},
                   {"mean", c.mean},
                   {"stderr", c.stderr_},
                   {"values", c.values}});
  }
  return {{"cells", arr}};
}

}  // namespace ts
