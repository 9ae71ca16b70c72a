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

#include "test_util.h"

#include "tiasu/cli.h"
#include "tiasu/common.h"
#include "tiasu/npy.h"
#include "tiasu/process.h"
#include "tiasu/tts_pool.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace tiasu;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = TIASU_CLI;

struct Outcome {
  int code;
  std::string out, err;
};

Outcome cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::size_t count_lines(const fs::path& p) {
  std::istringstream in(read_file(p));
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST_CASE("environment interpolation") {
  ::setenv("TIASU_TEST_HOST", "localhost:9000", 1);
  ::unsetenv("TIASU_TEST_UNSET");
  CHECK(interpolate_env("http://${TIASU_TEST_HOST}/tts") == "http://localhost:9000/tts");
  CHECK(interpolate_env("${TIASU_TEST_UNSET:-fallback}") == "fallback");
  CHECK(interpolate_env("${TIASU_TEST_HOST:-x}") == "localhost:9000");
  CHECK(interpolate_env("no variables") == "no variables");
  CHECK_THROWS_AS(interpolate_env("${TIASU_TEST_UNSET}"), ConfigError);
  const json j = interpolate_env(json{{"a", {"${TIASU_TEST_HOST}", 3}}, {"b", {{"c", "${TIASU_TEST_UNSET:-d}"}}}});
  CHECK(j["a"][0] == "localhost:9000");
  CHECK(j["a"][1] == 3);
  CHECK(j["b"]["c"] == "d");

  tiasu::testing::TempDir dir("cfg");
  write(dir / "c.json", R"({"endpoint": "${TIASU_TEST_HOST}"})");
  CHECK(load_config(dir / "c.json")["endpoint"] == "localhost:9000");
  write(dir / "bad.json", R"({"endpoint": )");
  CHECK_THROWS(load_config(dir / "bad.json"));
}

TEST_CASE("exit codes of the binary") {
  tiasu::testing::TempDir dir("exit");
  const auto help = run_process({kCli, "--help"}, 60);
  CHECK(help.exit_code == kExitOk);
  CHECK(help.output.find("grid") != std::string::npos);
  CHECK(run_process({kCli, "bogus"}, 60).exit_code == kExitUsage);
  CHECK(run_process({kCli, "train", "--no-such-flag"}, 60).exit_code == kExitUsage);
  CHECK(run_process({kCli}, 60).exit_code == kExitUsage);
  // A missing input is a run failure with a structured error on stderr.
  const auto fail = run_process(
      {"sh", "-c", "'" + kCli + "' report --results '" + (dir / "missing.csv").string() + "' --out '" + dir.path().string() + "' 2>&1 >/dev/null"},
      60);
  CHECK(fail.exit_code == kExitFailure);
  const auto err = json::parse(fail.output.substr(fail.output.find('{')));
  CHECK(err.contains("error"));
  CHECK(err.contains("message"));
  CHECK(run_process({kCli, "train", "--method", "not_a_method", "--out", (dir / "r").string()}, 60).exit_code ==
        kExitFailure);
}

TEST_CASE("synth, pool and augment wiring") {
  tiasu::testing::TempDir dir("wiring");
  const std::string w = (dir / "w").string();
  auto s = cli({"synth", "--n", "40", "--p", "0.5", "--seed", "3", "--out", w});
  REQUIRE(s.code == kExitOk);
  CHECK(fs::exists(dir / "w" / "world.json"));
  CHECK(count_lines(dir / "w" / "manifest.jsonl") == 40);

  auto p = cli({"pool", "--world", w, "--experts", "synthetic:3", "--seed", "3", "--out", (dir / "pool").string()});
  REQUIRE(p.code == kExitOk);
  const GenerationPool pool = read_pool_manifest(dir / "pool" / "pool.jsonl");
  CHECK(pool.entries.size() == 20);
  for (const auto& [id, cands] : pool.entries) {
    CHECK(cands.size() == 3);
    std::set<std::string> experts;
    for (const auto& c : cands) experts.insert(c.expert);
    CHECK(experts.size() == 3);
  }

  auto a = cli({"augment", "--world", w, "--experts", "synthetic:2", "--rephraser", "resample", "--out",
                (dir / "aug").string()});
  REQUIRE(a.code == kExitOk);
  CHECK(count_lines(dir / "aug" / "aug.jsonl") == 20);
  CHECK(json::parse(a.out)["candidates"] == 40);

  CHECK(cli({"pool", "--world", w, "--experts", "nonsense:1", "--out", (dir / "x").string()}).code == kExitFailure);
}

TEST_CASE("train writes exactly one run directory and eval rescores it") {
  tiasu::testing::TempDir dir("train");
  write(dir / "cfg.json", R"({"world": {"n": 200}, "epochs": 2, "qs": [0, 0.5]})");
  const auto r = run_process({"sh", "-c",
                              "cd '" + dir.path().string() + "' && exec '" + kCli +
                                  "' train --config cfg.json --method tiasu_s --p 0.95 --seed 1 2>/dev/null"},
                             600);
  REQUIRE(r.exit_code == kExitOk);
  std::vector<fs::path> runs;
  for (const auto& e : fs::directory_iterator(dir / "runs")) runs.push_back(e.path());
  REQUIRE(runs.size() == 1);
  for (const std::string f : {"config.json", "history.json", "checkpoint.bin", "predictions.csv", "metrics.json"})
    CHECK(fs::exists(runs[0] / f));
  const json metrics = json::parse(read_file(runs[0] / "metrics.json"));
  CHECK(metrics["method"] == "tiasu_s");
  CHECK(metrics["p"] == 0.95);
  CHECK(metrics["metrics"].contains("0.50"));

  auto e = cli({"eval", "--run", runs[0].string(), "--q", "0,0.5"});
  REQUIRE(e.code == kExitOk);
  const json ev = json::parse(read_file(runs[0] / "eval.json"));
  // Rescoring the stored checkpoint reproduces the training-time numbers.
  CHECK(ev["metrics"]["0.50"]["uar"] == metrics["metrics"]["0.50"]["uar"]);
  CHECK(ev["metrics"]["0.00"]["uar"] == metrics["metrics"]["0.00"]["uar"]);
}

TEST_CASE("grid --config emits a report and resumes") {
  tiasu::testing::TempDir dir("gridcli");
  ::setenv("TIASU_TEST_GRID_OUT", (dir / "out").c_str(), 1);
  write(dir / "desk.json", R"({
    "datasets": [{"name": "content", "task": "intent", "world": {"profile": "content_dominant", "n": 120}, "metric": "f1_macro"}],
    "methods": ["text", "tiasu_s"], "ps": [0.5], "qs": [0, 0.5], "folds": 5, "fold_ids": [0], "seeds": [1],
    "cell": {"epochs": 1}, "lr": {"speech": 5e-4, "text": 1e-3, "mm": 1e-3},
    "out": "${TIASU_TEST_GRID_OUT}"})");
  auto g = cli({"grid", "--config", (dir / "desk.json").string()});
  REQUIRE(g.code == kExitOk);
  for (const std::string f : {"results.csv", "results.json", "table2.md", "summary.md", "plot_content_q0.00.svg",
                              "plot_content_q0.50.svg"})
    CHECK(fs::exists(dir / "out" / "report" / f));
  CHECK(count_lines(dir / "out" / "journal.jsonl") == 2);
  const std::string csv = read_file(dir / "out" / "report" / "results.csv");
  CHECK(csv.find("content,intent,tiasu_s,0.5,0.5,") != std::string::npos);

  auto again = cli({"grid", "--config", (dir / "desk.json").string()});
  REQUIRE(again.code == kExitOk);
  CHECK(count_lines(dir / "out" / "journal.jsonl") == 2);
  CHECK(read_file(dir / "out" / "report" / "results.csv") == csv);

  auto rep = cli({"report", "--results", (dir / "out" / "journal.jsonl").string(), "--method", "text", "--out",
                  (dir / "rep").string()});
  REQUIRE(rep.code == kExitOk);
  const std::string filtered = read_file(dir / "rep" / "results.csv");
  CHECK(filtered.find("tiasu_s") == std::string::npos);
  CHECK(filtered.find("text") != std::string::npos);
}
