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

#include "doctest.h"

#include "../support/metric_fixtures.h"
#include "../support/oracles.h"
#include "test_util.h"

#include "tiasu/common.h"
#include "tiasu/evalrep.h"
#include "tiasu/metrics.h"
#include "tiasu/npy.h"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

using namespace tiasu;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = TIASU_FIXTURES;

double frac(long n, long d) { return static_cast<double>(n) / static_cast<double>(d); }

// Rational fixtures: equal up to double rounding of the class sums.
bool exact(double got, double want) { return std::abs(got - want) <= 4 * std::numeric_limits<double>::epsilon(); }

GridConfig small_grid() {
  GridConfig g;
  GridDataset d;
  d.name = "toy";
  d.task = "emotion";
  d.world.n = 50;
  g.datasets = {d};
  g.methods = {Method::kText, Method::kMm};
  g.ps = {0.0, 0.5};
  g.qs = {0.0};
  g.folds = 5;
  g.fold_ids = {0};
  g.seeds = {1, 2};
  return g;
}

// Deterministic metric per cell; counts invocations.
struct FakeRunner {
  std::shared_ptr<std::atomic<int>> calls = std::make_shared<std::atomic<int>>(0);
  std::optional<Method> fail_method;
  double fail_p = -1;

  CellResult operator()(const CellSpec& c) const {
    ++*calls;
    if (fail_method && c.method == *fail_method && c.p == fail_p) throw DivergenceError("synthetic failure");
    CellResult r;
    for (double q : c.qs) {
      const double v = 0.5 + 0.1 * static_cast<int>(c.method) - 0.2 * c.p - 0.1 * q + 0.01 * static_cast<double>(c.seed);
      r.metric_by_q[q] = v;
      r.metrics_by_q[q] = {{"uar", v}, {"accuracy", v + 0.01}};
    }
    r.history.best_epoch = 1;
    return r;
  }
};

ResultRow raw(const std::string& ds, const std::string& method, double p, double q, int fold, int seed, double v,
              const std::string& metric = "uar") {
  ResultRow r;
  r.key = {ds, "emotion", method, p, q, fold, seed};
  r.metric = metric;
  r.value = v;
  return r;
}

}  // namespace

TEST_CASE("metric fixtures") {
  REQUIRE(oracle::kMetricFixtures.size() >= 20);
  for (const auto& f : oracle::kMetricFixtures) {
    CAPTURE(f.uar_n);
    CHECK(exact(uar(f.preds, f.labels), frac(f.uar_n, f.uar_d)));
    CHECK(std::abs(f1(f.preds, f.labels, F1Average::kMacro) - frac(f.macro_n, f.macro_d)) < 1e-12);
    CHECK(std::abs(f1(f.preds, f.labels, F1Average::kWeighted) - frac(f.weighted_n, f.weighted_d)) < 1e-12);
    CHECK(exact(accuracy(f.preds, f.labels), frac(f.acc_n, f.acc_d)));
    CHECK(std::abs(f1(f.preds, f.labels, F1Average::kMicro) - accuracy(f.preds, f.labels)) < 1e-12);
    // The counting oracles agree with the hand-enumerated values too.
    CHECK(std::abs(oracle::uar(f.preds, f.labels) - frac(f.uar_n, f.uar_d)) < 1e-12);
    CHECK(std::abs(oracle::f1_macro(f.preds, f.labels) - frac(f.macro_n, f.macro_d)) < 1e-12);
  }
  // labels [0,0,1,1], preds [0,1,1,1]
  CHECK(uar({0, 1, 1, 1}, {0, 0, 1, 1}) == 0.75);
  CHECK(uar({2, 2, 2, 2, 2, 2, 2, 2}, {0, 1, 2, 3, 0, 1, 2, 3}) == 0.25);
  CHECK(std::abs(f1({0, 1, 1}, {0, 0, 1}) - 2.0 / 3.0) < 1e-12);
  CHECK_THROWS(uar({}, {}));
  CHECK_THROWS(f1({0}, {0, 1}));
  CHECK_THROWS(compute_metric(Metric::kUar, {-1}, {0}));
  for (Metric m : {Metric::kUar, Metric::kF1Macro, Metric::kF1Micro, Metric::kF1Weighted, Metric::kAccuracy})
    CHECK(metric_from_string(to_string(m)) == m);
}

TEST_CASE("micro F1 equals accuracy and uar is permutation invariant") {
  Rng rng = make_stream(7, "metrics");
  for (int c = 0; c < 100; ++c) {
    const int n = 1 + static_cast<int>(uniform_below(rng, 60));
    const int k = 2 + static_cast<int>(uniform_below(rng, 6));
    std::vector<int> p(static_cast<std::size_t>(n)), l(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      p[static_cast<std::size_t>(i)] = static_cast<int>(uniform_below(rng, static_cast<std::size_t>(k)));
      l[static_cast<std::size_t>(i)] = static_cast<int>(uniform_below(rng, static_cast<std::size_t>(k)));
    }
    CHECK(std::abs(f1(p, l, F1Average::kMicro) - accuracy(p, l)) < 1e-12);
    CHECK(std::abs(uar(p, l) - oracle::uar(p, l)) < 1e-12);
    CHECK(std::abs(f1(p, l, F1Average::kMacro) - oracle::f1_macro(p, l)) < 1e-12);
    CHECK(std::abs(f1(p, l, F1Average::kWeighted) - oracle::f1_weighted(p, l)) < 1e-12);

    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> pp = p, ll = l;
    for (auto& x : pp) x = perm[static_cast<std::size_t>(x)];
    for (auto& x : ll) x = perm[static_cast<std::size_t>(x)];
    CHECK(std::abs(uar(pp, ll) - uar(p, l)) < 1e-12);
  }
}

TEST_CASE("aggregation: folds first, then seeds") {
  ResultTable t;
  t.add(raw("d", "mm", 0, 0, 0, 1, 0.2));
  t.add(raw("d", "mm", 0, 0, 1, 1, 0.4));
  t.add(raw("d", "mm", 0, 0, 0, 2, 0.9));
  CHECK_THROWS_AS(t.add(raw("d", "mm", 0, 0, 0, 2, 0.1)), ValidationError);
  t.aggregate();
  const ResultRow* a = t.find_aggregate("d", "mm", 0, 0);
  REQUIRE(a);
  CHECK(a->aggregate);
  // A flat mean would give 0.5.
  CHECK(a->value == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(a->count == 3);
  CHECK(a->seed_std == doctest::Approx(std::sqrt(0.18)).epsilon(1e-12));
  CHECK(a->key.fold == kAggregated);
  CHECK(a->key.seed == kAggregated);
  CHECK(t.raw_rows().size() == 3);
  CHECK(t.aggregate_rows().size() == 1);
  t.aggregate();
  CHECK(t.size() == 4);
}

TEST_CASE("grid: cardinality, resume and failures") {
  tiasu::testing::TempDir dir("grid");
  const GridConfig g = small_grid();
  CHECK(expand_grid(g).size() == 8);
  CHECK(grid_config_from_json(to_json(g)).methods.size() == 2);

  FakeRunner fake;
  GridOptions o;
  o.journal = dir / "journal.jsonl";
  o.runner = fake;
  o.workers = 2;
  const GridOutcome first = run_grid(g, o);
  CHECK(first.executed == 8);
  CHECK(first.failed == 0);
  CHECK(*fake.calls == 8);
  CHECK(first.table.raw_rows().size() == 8);
  CHECK(first.table.aggregate_rows().size() == 4);
  const ResultRow* a = first.table.find_aggregate("toy", "mm", 0.5, 0.0);
  REQUIRE(a);
  CHECK(a->value == doctest::Approx(0.5 + 0.2 - 0.1 + 0.015).epsilon(1e-12));
  CHECK(a->secondary.at("accuracy") == doctest::Approx(a->value + 0.01).epsilon(1e-12));

  const GridOutcome second = run_grid(g, o);
  CHECK(second.executed == 0);
  CHECK(second.skipped == 8);
  CHECK(*fake.calls == 8);
  CHECK(render_csv(second.table) == render_csv(first.table));

  // A failing cell is journaled; the other cells finish.
  tiasu::testing::TempDir dir2("grid-fail");
  FakeRunner failing;
  failing.fail_method = Method::kMm;
  failing.fail_p = 0.5;
  GridOptions of;
  of.journal = dir2 / "journal.jsonl";
  of.runner = failing;
  const GridOutcome broken = run_grid(g, of);
  CHECK(broken.failed == 2);
  CHECK(broken.executed == 6);
  CHECK(broken.failures.size() == 2);
  CHECK(broken.table.raw_rows().size() == 6);
  int failed_records = 0;
  for (const auto& rec : Journal(of.journal).read()) failed_records += rec.value("status", "") == "failed";
  CHECK(failed_records == 2);
  // Only the failed cells run again.
  FakeRunner healthy;
  of.runner = healthy;
  const GridOutcome healed = run_grid(g, of);
  CHECK(healed.executed == 2);
  CHECK(healed.skipped == 6);
  CHECK(healed.table.raw_rows().size() == 8);
}

TEST_CASE("journal ignores a torn trailing line") {
  tiasu::testing::TempDir dir("journal");
  Journal j(dir / "j.jsonl");
  j.append({{"key", "a"}, {"status", "ok"}});
  j.append({{"key", "b"}, {"status", "ok"}});
  {
    std::ofstream f(dir / "j.jsonl", std::ios::app);
    f << "{\"key\": \"c\", \"sta";
  }
  const auto recs = j.read();
  REQUIRE(recs.size() == 2);
  CHECK(recs[1]["key"] == "b");
}

TEST_CASE("cell keys are stable and distinct") {
  const auto cells = expand_grid(small_grid());
  std::set<std::string> keys;
  for (const auto& c : cells) keys.insert(c.key);
  CHECK(keys.size() == cells.size());
  CHECK(cell_key(cells[0].spec) == cells[0].key);
  CellSpec changed = cells[0].spec;
  changed.epochs = 3;
  CHECK(cell_key(changed) != cells[0].key);
}

TEST_CASE("table2 layout renders the recorded full-scale numbers byte-stably") {
  ResultTable t = load_results(kFixtures + "/fullscale/table2_results.csv");
  t.aggregate();
  const std::string golden = read_file(kFixtures + "/fullscale/table2_golden.md");
  const std::string once = render_table2(t);
  CHECK(once == golden);
  CHECK(render_table2(t) == once);
  CHECK(once.find("| IEMOCAP | 62.8 | 69.2 | 71.4 |") != std::string::npos);

  ResultTable no_speech;
  for (const auto& r : t.raw_rows())
    if (r.key.method != "speech") no_speech.add(r);
  no_speech.aggregate();
  const std::string partial = render_table2(no_speech);
  CHECK(partial.rfind("| Dataset | Text-Only | Multi-modal |\n", 0) == 0);
  CHECK(partial.find("Speech-Only") == std::string::npos);
}

TEST_CASE("csv and json round trips") {
  ResultTable t = load_results(kFixtures + "/fullscale/table2_results.csv");
  ResultRow r = raw("toy", "tiasu_s", 0.95, 0.5, 2, 3, 1.0 / 3.0);
  r.secondary = {{"f1_macro", 0.25}, {"accuracy", 0.125}};
  t.add(r);
  t.aggregate();
  const std::string csv = render_csv(t);
  const ResultTable back = parse_results_csv(csv);
  CHECK(render_csv(back) == csv);
  CHECK(back.size() == t.size());
  const ResultTable from_json = result_table_from_json(to_json(t));
  CHECK(render_csv(from_json) == csv);
  CHECK_THROWS(parse_results_csv("dataset,method\nx,y\n"));
}

TEST_CASE("emit_report writes every artifact") {
  tiasu::testing::TempDir dir("report");
  ResultTable t;
  for (const std::string ds : {"A", "B"})
    for (const std::string m : {"speech", "tiasu_s", "mm"})
      for (double p : {0.0, 0.5, 0.9})
        for (double q : {0.0, 0.5})
          for (int seed : {1, 2}) t.add(raw(ds, m, p, q, 0, seed, 0.5 - 0.2 * p + 0.01 * seed));
  t.aggregate();
  const auto files = emit_report(t, dir.path());
  for (const std::string f : {"results.csv", "results.json", "table2.md", "summary.md"}) CHECK(fs::exists(dir / f));
  int plots = 0;
  for (const auto& e : fs::directory_iterator(dir.path()))
    if (e.path().extension() == ".svg") {
      ++plots;
      const std::string svg = read_file(e.path());
      CHECK(svg.rfind("<svg", 0) == 0);
      std::size_t series = 0;
      for (std::size_t pos = svg.find("data-method="); pos != std::string::npos; pos = svg.find("data-method=", pos + 1)) ++series;
      CHECK(series == 3);
    }
  CHECK(plots == 4);
  CHECK(fs::exists(dir / "plot_A_q0.50.svg"));
  CHECK(files.size() == 8);
  const std::string md = read_file(dir / "summary.md");
  CHECK(md.find("### A, q = 0.00") != std::string::npos);
  CHECK_THROWS(emit_report(ResultTable{}, dir / "empty"));
}
