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

#include "tiasu/evalrep.h"

#include "tiasu/npy.h"
#include "tiasu/process.h"

#include <spdlog/spdlog.h>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

namespace tiasu {

using nlohmann::json;

namespace {

constexpr double kCoordTol = 1e-9;

bool same(double a, double b) { return std::abs(a - b) < kCoordTol; }

std::string num(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

double parse_double(const std::string& s, std::size_t line) {
  if (s == "nan") return std::nan("");
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError("bad number '" + s + "'", line);
  return v;
}

std::int64_t parse_int(const std::string& s, std::size_t line) {
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError("bad integer '" + s + "'", line);
  return v;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Splits CSV text into records, honouring quoted fields.
std::vector<std::vector<std::string>> split_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
      }
      record.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw ParseError("unterminated quote in CSV");
  if (any || !field.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  return records;
}

json row_json(const ResultRow& r) {
  json j = {{"dataset", r.key.dataset}, {"task", r.key.task},   {"method", r.key.method},
            {"p", r.key.p},             {"q", r.key.q},         {"fold", r.key.fold},
            {"seed", r.key.seed},       {"kind", r.aggregate ? "aggregate" : "raw"},
            {"metric", r.metric},       {"value", r.value},     {"secondary", r.secondary}};
  if (r.aggregate) {
    j["count"] = r.count;
    j["seed_std"] = r.seed_std;
  }
  return j;
}

ResultRow row_from_json(const json& j) {
  ResultRow r;
  r.key.dataset = j.at("dataset").get<std::string>();
  r.key.task = j.value("task", std::string());
  r.key.method = j.at("method").get<std::string>();
  r.key.p = j.at("p").get<double>();
  r.key.q = j.at("q").get<double>();
  r.key.fold = j.value("fold", std::int64_t{0});
  r.key.seed = j.value("seed", std::int64_t{0});
  r.aggregate = j.value("kind", std::string("raw")) == "aggregate";
  r.metric = j.at("metric").get<std::string>();
  r.value = j.at("value").get<double>();
  if (j.contains("secondary")) r.secondary = j["secondary"].get<std::map<std::string, double>>();
  r.count = j.value("count", 1);
  r.seed_std = j.value("seed_std", 0.0);
  return r;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' ? c : '_';
  return out.empty() ? "_" : out;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Aggregates of the table, computing them on a copy if the table holds none.
std::vector<ResultRow> aggregates_of(const ResultTable& table) {
  std::vector<ResultRow> agg = table.aggregate_rows();
  if (!agg.empty()) return agg;
  ResultTable copy = table;
  copy.aggregate();
  return copy.aggregate_rows();
}

template <typename T, typename F>
std::vector<T> unique_in_order(const std::vector<ResultRow>& rows, F&& get) {
  std::vector<T> out;
  for (const ResultRow& r : rows) {
    T v = get(r);
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// ResultTable

void ResultTable::add(ResultRow row) {
  auto id = std::make_pair(row.key, row.aggregate);
  if (!keys_.insert(id).second)
    throw ValidationError("duplicate result row for " + row.key.dataset + "/" + row.key.method + " p=" +
                          num(row.key.p) + " q=" + num(row.key.q) + " fold=" + std::to_string(row.key.fold) +
                          " seed=" + std::to_string(row.key.seed));
  rows_.push_back(std::move(row));
}

std::vector<ResultRow> ResultTable::raw_rows() const {
  std::vector<ResultRow> out;
  for (const ResultRow& r : rows_)
    if (!r.aggregate) out.push_back(r);
  return out;
}

std::vector<ResultRow> ResultTable::aggregate_rows() const {
  std::vector<ResultRow> out;
  for (const ResultRow& r : rows_)
    if (r.aggregate) out.push_back(r);
  return out;
}

void ResultTable::aggregate() {
  std::vector<ResultRow> raw = raw_rows();
  rows_.clear();
  keys_.clear();
  for (ResultRow& r : raw) add(std::move(r));

  struct Group {
    ResultKey key;
    std::string metric;
    // seed -> accumulated fold values
    std::vector<std::int64_t> seeds;
    std::map<std::int64_t, std::vector<const ResultRow*>> by_seed;
    int count = 0;
  };
  std::vector<Group> groups;
  for (const ResultRow& r : rows_) {
    ResultKey k = r.key;
    k.fold = kAggregated;
    k.seed = kAggregated;
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const Group& g) { return g.key == k && g.metric == r.metric; });
    if (it == groups.end()) {
      groups.push_back(Group{k, r.metric, {}, {}, 0});
      it = groups.end() - 1;
    }
    if (!it->by_seed.count(r.key.seed)) it->seeds.push_back(r.key.seed);
    it->by_seed[r.key.seed].push_back(&r);
    ++it->count;
  }

  std::vector<ResultRow> out;
  for (const Group& g : groups) {
    ResultRow a;
    a.key = g.key;
    a.metric = g.metric;
    a.aggregate = true;
    a.count = g.count;
    std::vector<double> seed_means;
    std::map<std::string, std::pair<double, int>> secondary;  // sum of seed means, seeds seen
    for (std::int64_t s : g.seeds) {
      const auto& folds = g.by_seed.at(s);
      double sum = 0;
      std::map<std::string, std::pair<double, int>> sec;
      for (const ResultRow* r : folds) {
        sum += r->value;
        for (const auto& [name, v] : r->secondary) {
          sec[name].first += v;
          sec[name].second += 1;
        }
      }
      seed_means.push_back(sum / static_cast<double>(folds.size()));
      for (const auto& [name, acc] : sec) {
        secondary[name].first += acc.first / acc.second;
        secondary[name].second += 1;
      }
    }
    double mean = 0;
    for (double v : seed_means) mean += v;
    mean /= static_cast<double>(seed_means.size());
    a.value = mean;
    if (seed_means.size() > 1) {
      double ss = 0;
      for (double v : seed_means) ss += (v - mean) * (v - mean);
      a.seed_std = std::sqrt(ss / static_cast<double>(seed_means.size() - 1));
    }
    for (const auto& [name, acc] : secondary) a.secondary[name] = acc.first / acc.second;
    out.push_back(std::move(a));
  }
  for (ResultRow& a : out) add(std::move(a));
}

const ResultRow* ResultTable::find_aggregate(const std::string& dataset, const std::string& method, double p,
                                             double q) const {
  for (const ResultRow& r : rows_)
    if (r.aggregate && r.key.dataset == dataset && r.key.method == method && same(r.key.p, p) && same(r.key.q, q))
      return &r;
  return nullptr;
}

json to_json(const ResultTable& table) {
  json rows = json::array();
  for (const ResultRow& r : table.rows()) rows.push_back(row_json(r));
  return {{"rows", rows}};
}

ResultTable result_table_from_json(const json& j) {
  ResultTable t;
  for (const json& r : j.at("rows")) t.add(row_from_json(r));
  return t;
}

std::string render_csv(const ResultTable& table) {
  std::set<std::string> secondary;
  for (const ResultRow& r : table.rows())
    for (const auto& [name, v] : r.secondary) secondary.insert(name);
  std::ostringstream os;
  os << "dataset,task,method,p,q,fold,seed,kind,metric,value,count,seed_std";
  for (const std::string& s : secondary) os << ',' << s;
  os << '\n';
  for (const ResultRow& r : table.rows()) {
    os << csv_field(r.key.dataset) << ',' << csv_field(r.key.task) << ',' << csv_field(r.key.method) << ','
       << num(r.key.p) << ',' << num(r.key.q) << ',' << r.key.fold << ',' << r.key.seed << ','
       << (r.aggregate ? "aggregate" : "raw") << ',' << r.metric << ',' << num(r.value) << ',' << r.count << ','
       << num(r.seed_std);
    for (const std::string& s : secondary) {
      os << ',';
      auto it = r.secondary.find(s);
      if (it != r.secondary.end()) os << num(it->second);
    }
    os << '\n';
  }
  return os.str();
}

ResultTable parse_results_csv(const std::string& text) {
  const auto records = split_csv(text);
  if (records.empty()) throw ParseError("empty results CSV");
  const std::vector<std::string>& header = records.front();
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* required : {"dataset", "method", "p", "q", "metric", "value"})
    if (!col.count(required)) throw ParseError(std::string("results CSV lacks column '") + required + "'", 1);
  static const std::set<std::string> fixed_cols = {"dataset", "task", "method", "p", "q", "fold", "seed",
                                                   "kind", "metric", "value", "count", "seed_std"};
  ResultTable t;
  for (std::size_t li = 1; li < records.size(); ++li) {
    const auto& rec = records[li];
    const std::size_t line = li + 1;
    if (rec.size() != header.size()) throw ParseError("field count mismatch", line);
    auto get = [&](const std::string& name) -> std::string {
      auto it = col.find(name);
      return it == col.end() ? std::string() : rec[it->second];
    };
    ResultRow r;
    r.key.dataset = get("dataset");
    r.key.task = get("task");
    r.key.method = get("method");
    r.key.p = parse_double(get("p"), line);
    r.key.q = parse_double(get("q"), line);
    if (!get("fold").empty()) r.key.fold = parse_int(get("fold"), line);
    if (!get("seed").empty()) r.key.seed = parse_int(get("seed"), line);
    const std::string kind = get("kind");
    if (!kind.empty() && kind != "raw" && kind != "aggregate") throw ParseError("bad kind '" + kind + "'", line);
    r.aggregate = kind == "aggregate";
    r.metric = get("metric");
    r.value = parse_double(get("value"), line);
    if (!get("count").empty()) r.count = static_cast<int>(parse_int(get("count"), line));
    if (!get("seed_std").empty()) r.seed_std = parse_double(get("seed_std"), line);
    for (std::size_t i = 0; i < header.size(); ++i)
      if (!fixed_cols.count(header[i]) && !rec[i].empty()) r.secondary[header[i]] = parse_double(rec[i], line);
    t.add(std::move(r));
  }
  return t;
}

ResultTable load_results(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  const std::string text = read_file(path);
  if (ext == ".csv") return parse_results_csv(text);
  if (ext == ".json") return result_table_from_json(json::parse(text));
  if (ext == ".jsonl") {
    ResultTable t;
    std::map<std::string, json> done;
    std::vector<std::string> order;
    for (const json& rec : Journal(path).read()) {
      if (rec.value("status", std::string()) != "ok") continue;
      const std::string key = rec.at("key").get<std::string>();
      if (!done.count(key)) order.push_back(key);
      done[key] = rec;
    }
    for (const std::string& key : order)
      for (const json& r : done[key].at("rows")) t.add(row_from_json(r));
    t.aggregate();
    return t;
  }
  throw InputError("unknown results format: " + path.string());
}

// ---------------------------------------------------------------------------
// Grid

json to_json(const GridConfig& g) {
  json datasets = json::array();
  for (const GridDataset& d : g.datasets)
    datasets.push_back({{"name", d.name}, {"task", d.task}, {"world", to_json(d.world)}, {"metric", to_string(d.metric)}});
  json methods = json::array();
  for (Method m : g.methods) methods.push_back(to_string(m));
  json base = to_json(g.base);
  for (const char* k : {"dataset", "world", "method", "p", "qs", "folds", "fold", "seed", "metric"}) base.erase(k);
  json j = {{"datasets", datasets}, {"methods", methods}, {"ps", g.ps},         {"qs", g.qs},
            {"folds", g.folds},     {"fold_ids", g.fold_ids}, {"seeds", g.seeds}, {"cell", base},
            {"workers", g.workers}};
  if (!g.lr_by_mode.empty()) j["lr"] = g.lr_by_mode;
  return j;
}

GridConfig grid_config_from_json(const json& j) {
  GridConfig g;
  if (!j.contains("datasets") || !j["datasets"].is_array() || j["datasets"].empty())
    throw ConfigError("grid config needs a non-empty 'datasets' array");
  for (const json& d : j["datasets"]) {
    GridDataset ds;
    ds.name = d.value("name", ds.name);
    if (d.contains("world")) ds.world = world_spec_from_json(d["world"]);
    ds.task = d.value("task", to_string(ds.world.profile));
    ds.metric = metric_from_string(d.value("metric", std::string("uar")));
    g.datasets.push_back(std::move(ds));
  }
  if (!j.contains("methods") || !j["methods"].is_array() || j["methods"].empty())
    throw ConfigError("grid config needs a non-empty 'methods' array");
  for (const json& m : j["methods"]) g.methods.push_back(method_from_string(m.get<std::string>()));
  if (j.contains("ps")) g.ps = j["ps"].get<std::vector<double>>();
  if (j.contains("qs")) g.qs = j["qs"].get<std::vector<double>>();
  g.folds = j.value("folds", g.folds);
  if (j.contains("fold_ids")) g.fold_ids = j["fold_ids"].get<std::vector<int>>();
  if (j.contains("seeds")) g.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (j.contains("cell")) {
    json cell = j["cell"];
    if (cell.contains("lr") && cell["lr"].is_object()) {
      g.lr_by_mode = cell["lr"].get<std::map<std::string, double>>();
      cell.erase("lr");
    }
    g.base = cell_spec_from_json(cell);
  }
  if (j.contains("lr")) {
    if (j["lr"].is_object())
      g.lr_by_mode = j["lr"].get<std::map<std::string, double>>();
    else
      g.base.lr = j["lr"].get<double>();
  }
  for (const auto& [mode, lr] : g.lr_by_mode) {
    modality_from_string(mode);
    if (!(lr > 0)) throw ConfigError("learning rate for '" + mode + "' must be positive");
  }
  g.workers = j.value("workers", g.workers);
  if (g.ps.empty() || g.qs.empty() || g.seeds.empty()) throw ConfigError("grid needs non-empty ps, qs and seeds");
  for (double v : g.ps)
    if (v < 0 || v > 1) throw ConfigError("p must lie in [0,1]");
  for (double v : g.qs)
    if (v < 0 || v > 1) throw ConfigError("q must lie in [0,1]");
  if (g.folds < 2) throw ConfigError("folds must be at least 2");
  for (int f : g.fold_ids)
    if (f < 0 || f >= g.folds) throw ConfigError("fold id out of range");
  if (g.workers < 1) throw ConfigError("workers must be at least 1");
  return g;
}

std::vector<GridCell> expand_grid(const GridConfig& config) {
  std::vector<int> folds = config.fold_ids;
  if (folds.empty())
    for (int f = 0; f < config.folds; ++f) folds.push_back(f);
  std::vector<GridCell> cells;
  for (const GridDataset& ds : config.datasets)
    for (Method m : config.methods)
      for (double p : config.ps)
        for (int fold : folds)
          for (std::uint64_t seed : config.seeds) {
            GridCell cell;
            cell.dataset = ds;
            if (cell.dataset.task.empty()) cell.dataset.task = to_string(ds.world.profile);
            CellSpec s = config.base;
            s.dataset = ds.name;
            s.world = ds.world;
            s.method = m;
            s.p = p;
            s.qs = config.qs;
            s.folds = config.folds;
            s.fold = fold;
            s.seed = seed;
            s.metric = ds.metric;
            auto lr = config.lr_by_mode.find(to_string(method_traits(m).mode));
            if (lr != config.lr_by_mode.end()) s.lr = lr->second;
            cell.spec = s;
            cell.key = cell_key(s);
            cells.push_back(std::move(cell));
          }
  return cells;
}

std::vector<ResultRow> rows_for_cell(const GridCell& cell, const CellResult& result) {
  std::vector<ResultRow> rows;
  const std::string headline = to_string(cell.spec.metric);
  for (double q : cell.spec.qs) {
    auto it = result.metric_by_q.find(q);
    if (it == result.metric_by_q.end()) throw ValidationError("cell result lacks q=" + num(q));
    ResultRow r;
    r.key = {cell.dataset.name, cell.dataset.task, to_string(cell.spec.method), cell.spec.p, q,
             cell.spec.fold,    static_cast<std::int64_t>(cell.spec.seed)};
    r.metric = headline;
    r.value = it->second;
    auto all = result.metrics_by_q.find(q);
    if (all != result.metrics_by_q.end())
      for (const auto& [name, v] : all->second)
        if (name != headline) r.secondary[name] = v;
    rows.push_back(std::move(r));
  }
  return rows;
}

Journal::Journal(std::filesystem::path path) : path_(std::move(path)) {}

void Journal::append(const json& record) {
  const std::string line = record.dump() + "\n";
  std::lock_guard<std::mutex> lock(mu_);
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw InputError("cannot open journal " + path_.string() + ": " + std::strerror(errno));
  std::size_t off = 0;
  while (off < line.size()) {
    const ssize_t n = ::write(fd, line.data() + off, line.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw InputError("journal write failed: " + std::string(std::strerror(err)));
    }
    off += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

std::vector<json> Journal::read() const {
  std::vector<json> out;
  std::ifstream in(path_);
  if (!in) return out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception&) {
      spdlog::warn("journal {}: skipping unparsable line {}", path_.string(), lineno);
    }
  }
  return out;
}

CellRunner process_cell_runner(std::vector<std::string> command, const std::filesystem::path& scratch_dir,
                               int timeout_seconds) {
  return [command = std::move(command), scratch_dir, timeout_seconds](const CellSpec& spec) {
    std::filesystem::create_directories(scratch_dir);
    const std::string key = cell_key(spec);
    const auto spec_path = scratch_dir / (key + ".spec.json");
    const auto result_path = scratch_dir / (key + ".result.json");
    write_file_atomic(spec_path, to_json(spec).dump(2));
    std::filesystem::remove(result_path);
    std::vector<std::string> argv = command;
    argv.push_back(spec_path.string());
    argv.push_back(result_path.string());
    const ProcessResult pr = run_process(argv, timeout_seconds);
    if (pr.timed_out) throw Error("cell worker timed out");
    if (pr.exit_code != 0) throw Error("cell worker exited with status " + std::to_string(pr.exit_code));
    CellResult r = cell_result_from_json(json::parse(read_file(result_path)));
    std::filesystem::remove(spec_path);
    std::filesystem::remove(result_path);
    return r;
  };
}

GridOutcome run_grid(const GridConfig& config, const GridOptions& options) {
  if (options.journal.empty()) throw ConfigError("run_grid needs a journal path");
  const std::vector<GridCell> cells = expand_grid(config);
  Journal journal(options.journal);

  std::map<std::string, json> completed;
  for (const json& rec : journal.read())
    if (rec.value("status", std::string()) == "ok" && rec.contains("key")) completed[rec["key"].get<std::string>()] = rec;

  GridOutcome outcome;
  std::vector<std::vector<ResultRow>> cell_rows(cells.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto it = completed.find(cells[i].key);
    if (it == completed.end()) {
      pending.push_back(i);
      continue;
    }
    for (const json& r : it->second.at("rows")) cell_rows[i].push_back(row_from_json(r));
    ++outcome.skipped;
  }
  spdlog::info("grid: {} cells, {} already complete, {} to run", cells.size(), outcome.skipped, pending.size());

  CellRunner runner = options.runner;
  if (!runner) {
    const std::filesystem::path run_root = options.run_root;
    runner = [run_root](const CellSpec& spec) {
      CellOptions co;
      if (!run_root.empty()) co.run_dir = run_root / cell_key(spec);
      return run_cell(spec, co);
    };
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t slot = next.fetch_add(1);
      if (slot >= pending.size()) return;
      const std::size_t i = pending[slot];
      const GridCell& cell = cells[i];
      const auto t0 = std::chrono::steady_clock::now();
      json rec = {{"key", cell.key}, {"dataset", cell.dataset.name}, {"task", cell.dataset.task},
                  {"cell", to_json(cell.spec)}, {"code_version", kCodeVersion}};
      try {
        const CellResult result = runner(cell.spec);
        std::vector<ResultRow> rows = rows_for_cell(cell, result);
        json rows_json = json::array();
        for (const ResultRow& r : rows) rows_json.push_back(row_json(r));
        rec["status"] = "ok";
        rec["rows"] = rows_json;
        rec["best_epoch"] = result.history.best_epoch;
        rec["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        journal.append(rec);
        std::lock_guard<std::mutex> lock(mu);
        cell_rows[i] = std::move(rows);
        ++outcome.executed;
        spdlog::info("grid: cell {} ({} {} p={} fold={} seed={}) done", cell.key, cell.dataset.name,
                     to_string(cell.spec.method), cell.spec.p, cell.spec.fold, cell.spec.seed);
      } catch (const std::exception& e) {
        rec["status"] = "failed";
        rec["error"] = e.what();
        try {
          journal.append(rec);
        } catch (const std::exception& je) {
          spdlog::error("grid: journal append failed: {}", je.what());
        }
        std::lock_guard<std::mutex> lock(mu);
        ++outcome.failed;
        outcome.failures.push_back(cell.key + ": " + e.what());
        spdlog::error("grid: cell {} failed: {}", cell.key, e.what());
      }
    }
  };
  const int workers = std::max(1, options.workers > 0 ? options.workers : config.workers);
  std::vector<std::thread> threads;
  for (int w = 1; w < std::min<int>(workers, static_cast<int>(pending.size())); ++w) threads.emplace_back(worker);
  worker();
  for (std::thread& t : threads) t.join();

  for (auto& rows : cell_rows)
    for (ResultRow& r : rows) outcome.table.add(std::move(r));
  outcome.table.aggregate();
  return outcome;
}

// ---------------------------------------------------------------------------
// Reports

std::string render_table2(const ResultTable& table) {
  const std::vector<ResultRow> agg = aggregates_of(table);
  struct Column {
    const char* method;
    const char* title;
  };
  static const Column kColumns[] = {{"text", "Text-Only"}, {"speech", "Speech-Only"}, {"mm", "Multi-modal"}};
  std::vector<ResultRow> base;
  for (const ResultRow& r : agg)
    if (same(r.key.p, 0) && same(r.key.q, 0)) base.push_back(r);
  const auto datasets = unique_in_order<std::string>(base, [](const ResultRow& r) { return r.key.dataset; });
  std::vector<Column> columns;
  for (const Column& c : kColumns)
    if (std::any_of(base.begin(), base.end(), [&](const ResultRow& r) { return r.key.method == c.method; }))
      columns.push_back(c);

  std::ostringstream os;
  os << "| Dataset |";
  for (const Column& c : columns) os << ' ' << c.title << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) os << "---|";
  os << '\n';
  for (const std::string& ds : datasets) {
    os << "| " << ds << " |";
    for (const Column& c : columns) {
      const ResultRow* r = table.find_aggregate(ds, c.method, 0, 0);
      std::string cellv = "-";
      if (!r) {
        for (const ResultRow& b : base)
          if (b.key.dataset == ds && b.key.method == c.method) cellv = fixed(100 * b.value, 1);
      } else {
        cellv = fixed(100 * r->value, 1);
      }
      os << ' ' << cellv << " |";
    }
    os << '\n';
  }
  return os.str();
}

std::string render_markdown(const ResultTable& table) {
  const std::vector<ResultRow> agg = aggregates_of(table);
  std::ostringstream os;
  const auto datasets = unique_in_order<std::string>(agg, [](const ResultRow& r) { return r.key.dataset; });
  for (const std::string& ds : datasets) {
    std::vector<ResultRow> rows;
    for (const ResultRow& r : agg)
      if (r.key.dataset == ds) rows.push_back(r);
    auto qs = unique_in_order<double>(rows, [](const ResultRow& r) { return r.key.q; });
    std::sort(qs.begin(), qs.end());
    const auto methods = unique_in_order<std::string>(rows, [](const ResultRow& r) { return r.key.method; });
    for (double q : qs) {
      std::vector<ResultRow> at_q;
      for (const ResultRow& r : rows)
        if (same(r.key.q, q)) at_q.push_back(r);
      auto ps = unique_in_order<double>(at_q, [](const ResultRow& r) { return r.key.p; });
      std::sort(ps.begin(), ps.end());
      os << "### " << ds << ", q = " << fixed(q, 2) << " (" << at_q.front().metric << ", %)\n\n| p |";
      for (const std::string& m : methods) os << ' ' << m << " |";
      os << "\n|---|";
      for (std::size_t i = 0; i < methods.size(); ++i) os << "---|";
      os << '\n';
      for (double p : ps) {
        os << "| " << fixed(p, 2) << " |";
        for (const std::string& m : methods) {
          const ResultRow* r = nullptr;
          for (const ResultRow& a : at_q)
            if (a.key.method == m && same(a.key.p, p)) r = &a;
          if (r)
            os << ' ' << fixed(100 * r->value, 1) << " ± " << fixed(100 * r->seed_std, 1) << " |";
          else
            os << " - |";
        }
        os << '\n';
      }
      os << '\n';
    }
  }
  return os.str();
}

std::string render_plot_svg(const ResultTable& table, const std::string& dataset, double q) {
  const std::vector<ResultRow> agg = aggregates_of(table);
  std::vector<ResultRow> rows;
  for (const ResultRow& r : agg)
    if (r.key.dataset == dataset && same(r.key.q, q)) rows.push_back(r);
  const auto methods = unique_in_order<std::string>(rows, [](const ResultRow& r) { return r.key.method; });

  const double W = 640, H = 400, left = 60, right = 150, top = 40, bottom = 50;
  double ymin = 1, ymax = 0;
  for (const ResultRow& r : rows) {
    ymin = std::min(ymin, r.value);
    ymax = std::max(ymax, r.value);
  }
  if (rows.empty()) {
    ymin = 0;
    ymax = 1;
  }
  ymin = std::max(0.0, std::floor(ymin * 10) / 10);
  ymax = std::min(1.0, std::ceil(ymax * 10) / 10);
  if (ymax - ymin < 0.1) {
    ymax = std::min(1.0, ymin + 0.1);
    ymin = ymax - 0.1;
  }
  const double pw = W - left - right, ph = H - top - bottom;
  auto X = [&](double p) { return left + p * pw; };
  auto Y = [&](double v) { return top + (ymax - v) / (ymax - ymin) * ph; };

  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
     << xml_escape(dataset) << ", q = " << fixed(q, 2) << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 10; i += 2) {
    const double p = i / 10.0;
    os << "<text x=\"" << fixed(X(p), 1) << "\" y=\"" << top + ph + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fixed(p, 1) << "</text>\n";
  }
  const int ticks = static_cast<int>(std::lround((ymax - ymin) * 10));
  for (int i = 0; i <= ticks; ++i) {
    const double v = ymin + i / 10.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << fixed(Y(v) + 4, 1)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fixed(100 * v, 0) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">training missing ratio p</text>\n";
  if (!rows.empty())
    os << "<text x=\"16\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 16 " << top + ph / 2
       << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(rows.front().metric)
       << " (%)</text>\n";
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    std::vector<std::pair<double, double>> pts;
    for (const ResultRow& r : rows)
      if (r.key.method == methods[mi]) pts.emplace_back(r.key.p, r.value);
    std::sort(pts.begin(), pts.end());
    const char* color = kColors[mi % (sizeof(kColors) / sizeof(kColors[0]))];
    os << "<g class=\"series\" data-method=\"" << xml_escape(methods[mi]) << "\">\n<polyline fill=\"none\" stroke=\""
       << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i)
      os << (i ? " " : "") << fixed(X(pts[i].first), 1) << ',' << fixed(Y(pts[i].second), 1);
    os << "\"/>\n";
    for (const auto& [p, v] : pts)
      os << "<circle cx=\"" << fixed(X(p), 1) << "\" cy=\"" << fixed(Y(v), 1) << "\" r=\"3\" fill=\"" << color
         << "\"/>\n";
    const double ly = top + 14 + 18 * static_cast<double>(mi);
    os << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 35 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 40 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
       << xml_escape(methods[mi]) << "</text>\n</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::filesystem::path> emit_report(const ResultTable& table, const std::filesystem::path& out_dir,
                                               const ReportOptions& options) {
  if (table.empty()) throw ValidationError("cannot report an empty result table");
  for (const std::string& f : options.formats)
    if (f != "csv" && f != "json" && f != "md" && f != "svg") throw ConfigError("unknown report format '" + f + "'");
  ResultTable full = table;
  if (full.aggregate_rows().empty()) full.aggregate();
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& bytes) {
    const auto path = out_dir / name;
    write_file_atomic(path, bytes);
    written.push_back(path);
  };
  put("results.csv", render_csv(full));
  put("results.json", to_json(full).dump(2) + "\n");
  if (options.formats.count("md")) {
    put("table2.md", render_table2(full));
    put("summary.md", render_markdown(full));
  }
  if (options.formats.count("svg")) {
    const std::vector<ResultRow> agg = full.aggregate_rows();
    std::vector<std::pair<std::string, double>> plots;
    for (const ResultRow& r : agg) {
      auto id = std::make_pair(r.key.dataset, r.key.q);
      if (std::none_of(plots.begin(), plots.end(),
                       [&](const auto& e) { return e.first == id.first && same(e.second, id.second); }))
        plots.push_back(id);
    }
    for (const auto& [ds, q] : plots)
      put("plot_" + sanitize(ds) + "_q" + fixed(q, 2) + ".svg", render_plot_svg(full, ds, q));
  }
  return written;
}

}  // namespace tiasu
