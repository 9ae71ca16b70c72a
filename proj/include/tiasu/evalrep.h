// Copyright 2026 The tiasu Authors. All Rights Reserved.
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

// Result tables, the experiment grid and report emission.
//
// A grid cell is one training run: (dataset, method, p, fold, seed). Every
// requested q is evaluated from the same trained model, so a cell yields one
// raw row per q. Completed cells are appended to a JSONL journal and skipped
// on rerun.

#ifndef TIASU_EVALREP_H_
#define TIASU_EVALREP_H_

#include "tiasu/experiment.h"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

namespace tiasu {

/// Aggregate rows use fold = seed = kAggregated.
inline constexpr std::int64_t kAggregated = -1;

struct ResultKey {
  std::string dataset;
  std::string task;
  std::string method;
  double p = 0.0;
  double q = 0.0;
  std::int64_t fold = 0;
  std::int64_t seed = 0;

  auto operator<=>(const ResultKey&) const = default;
};

struct ResultRow {
  ResultKey key;
  std::string metric;  // headline metric name
  double value = 0.0;
  /// Other metrics computed for the same predictions.
  std::map<std::string, double> secondary;
  bool aggregate = false;
  /// Aggregates only: number of raw rows and the sample std over per-seed means.
  int count = 1;
  double seed_std = 0.0;
};

class ResultTable {
 public:
  /// Throws ValidationError on a duplicate (key, aggregate flag).
  void add(ResultRow row);
  const std::vector<ResultRow>& rows() const { return rows_; }
  std::vector<ResultRow> raw_rows() const;
  std::vector<ResultRow> aggregate_rows() const;
  bool empty() const { return rows_.empty(); }
  std::size_t size() const { return rows_.size(); }

  /// Drops existing aggregates and recomputes them from raw rows: mean over
  /// folds within each seed, then mean (and std) over seeds.
  void aggregate();

  /// Aggregate row for the given coordinates, or nullptr.
  const ResultRow* find_aggregate(const std::string& dataset, const std::string& method, double p, double q) const;

 private:
  std::vector<ResultRow> rows_;
  std::set<std::pair<ResultKey, bool>> keys_;
};

nlohmann::json to_json(const ResultTable& table);
ResultTable result_table_from_json(const nlohmann::json& j);
std::string render_csv(const ResultTable& table);
ResultTable parse_results_csv(const std::string& text);
/// Reads .csv, .json (report) or .jsonl (journal) results.
ResultTable load_results(const std::filesystem::path& path);

struct GridDataset {
  std::string name = "synthetic";
  std::string task;  // defaults to the world profile
  WorldSpec world;
  Metric metric = Metric::kUar;
};

struct GridConfig {
  std::vector<GridDataset> datasets;
  std::vector<Method> methods;
  std::vector<double> ps = {0.0};
  std::vector<double> qs = {0.0};
  int folds = 5;
  /// Folds to run as test folds; empty means all.
  std::vector<int> fold_ids;
  std::vector<std::uint64_t> seeds = {1};
  /// Shared cell settings (experts, style, aug, epochs, batch size, dropout rate).
  CellSpec base;
  /// Learning rate per model mode ("speech", "text", "mm"); overrides base.lr.
  std::map<std::string, double> lr_by_mode;
  int workers = 1;
};

nlohmann::json to_json(const GridConfig& g);
GridConfig grid_config_from_json(const nlohmann::json& j);

struct GridCell {
  GridDataset dataset;
  CellSpec spec;
  std::string key;
};

/// Cells in deterministic order: dataset, method, p, fold, seed.
std::vector<GridCell> expand_grid(const GridConfig& config);

/// One raw row per q of a finished cell.
std::vector<ResultRow> rows_for_cell(const GridCell& cell, const CellResult& result);

/// Append-only JSONL journal. Each record is written with a single write() on
/// an O_APPEND descriptor under a process-local mutex.
class Journal {
 public:
  explicit Journal(std::filesystem::path path);
  void append(const nlohmann::json& record);
  /// Records in file order; a torn trailing line is skipped with a warning.
  std::vector<nlohmann::json> read() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

using CellRunner = std::function<CellResult(const CellSpec&)>;

/// Runs a cell in a child process: `<command...> <spec.json> <result.json>`.
CellRunner process_cell_runner(std::vector<std::string> command, const std::filesystem::path& scratch_dir,
                               int timeout_seconds = 24 * 3600);

struct GridOptions {
  std::filesystem::path journal;
  /// Defaults to in-process run_cell.
  CellRunner runner;
  /// Overrides config.workers when positive.
  int workers = 0;
  /// Run directories go to <run_root>/<cell key> when set.
  std::filesystem::path run_root;
};

struct GridOutcome {
  ResultTable table;
  int executed = 0;
  int skipped = 0;
  int failed = 0;
  std::vector<std::string> failures;  // "key: message"
};

/// Executes every cell not already completed in the journal. Failures are
/// journaled and counted; the grid continues. The returned table carries raw
/// rows of all completed cells plus aggregates.
GridOutcome run_grid(const GridConfig& config, const GridOptions& options);

struct ReportOptions {
  /// Any of "csv", "json", "md", "svg". CSV and JSON are always written.
  std::set<std::string> formats = {"csv", "json", "md", "svg"};
};

/// Text-Only / Speech-Only / Multi-modal columns from the text, speech and mm
/// aggregates at p = q = 0, as percentages. Columns with no values are omitted.
std::string render_table2(const ResultTable& table);

/// One markdown table per (dataset, q): rows are p, columns are methods.
std::string render_markdown(const ResultTable& table);

/// Line plot of the headline metric against p, one series per method.
std::string render_plot_svg(const ResultTable& table, const std::string& dataset, double q);

/// Writes results.csv, results.json, table2.md, summary.md and
/// plot_<dataset>_q<q>.svg files into `out_dir`; returns the written paths.
std::vector<std::filesystem::path> emit_report(const ResultTable& table, const std::filesystem::path& out_dir,
                                               const ReportOptions& options = {});

}  // namespace tiasu

#endif  // TIASU_EVALREP_H_
