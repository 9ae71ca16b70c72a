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

#include "tiasu/cli.h"

#include "tiasu/augment.h"
#include "tiasu/evalrep.h"
#include "tiasu/experiment.h"
#include "tiasu/npy.h"
#include "tiasu/process.h"

#include "CLI11.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

namespace tiasu {

using nlohmann::json;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

void ensure_stderr_logger() {
  static const bool done = [] {
    spdlog::set_default_logger(spdlog::stderr_color_mt("tiasu"));
    if (const char* level = std::getenv("TIASU_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(level));
    return true;
  }();
  (void)done;
}

// Flags shared by every subcommand. Values parse as comma-separated lists so
// that grid can sweep them; single-run subcommands take exactly one value.
struct CommonFlags {
  std::string config;
  std::vector<std::uint64_t> seed;
  std::vector<double> p;
  std::vector<double> q;
  std::vector<std::string> method;
  std::string out;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON config file (supports ${ENV} interpolation)");
  app->add_option("--seed", f.seed, "Seed (comma list for grid)")->delimiter(',');
  app->add_option("--p", f.p, "Training missing ratio (comma list for grid)")->delimiter(',');
  app->add_option("--q", f.q, "Test missing ratio(s)")->delimiter(',');
  app->add_option("--method", f.method, "Training method (comma list for grid)")->delimiter(',');
  app->add_option("--out", f.out, "Output directory");
}

json config_of(const CommonFlags& f) { return f.config.empty() ? json::object() : load_config(f.config); }

template <typename T>
std::optional<T> single(const std::vector<T>& v, const char* flag) {
  if (v.empty()) return std::nullopt;
  if (v.size() > 1) throw UsageError(std::string("--") + flag + " takes one value for this subcommand");
  return v.front();
}

std::filesystem::path out_dir(const CommonFlags& f, const json& cfg, const std::string& fallback) {
  if (!f.out.empty()) return f.out;
  if (cfg.contains("out")) return cfg["out"].get<std::string>();
  return fallback;
}

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? v : "";
}

WorldSpec load_world_spec(const std::filesystem::path& dir) {
  const auto path = dir / "world.json";
  if (!std::filesystem::exists(path)) throw InputError("no world.json in " + dir.string());
  return world_spec_from_json(json::parse(read_file(path)));
}

std::shared_ptr<const WorldParams> build_world(const WorldSpec& w) {
  return std::make_shared<const WorldParams>(
      make_world(w.profile, w.world_seed, w.num_classes, w.num_experts, w.options));
}

// "synthetic:K", "command:NAME=CMD" or "http:NAME=URL".
std::vector<std::shared_ptr<const ExpertAdapter>> make_experts(const std::vector<std::string>& specs,
                                                               std::shared_ptr<const WorldParams> world,
                                                               const std::filesystem::path& work_dir) {
  std::vector<std::shared_ptr<const ExpertAdapter>> out;
  for (const std::string& spec : specs) {
    const auto colon = spec.find(':');
    const std::string kind = spec.substr(0, colon);
    const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
    if (kind == "synthetic") {
      if (!world) throw ConfigError("synthetic experts need a synthetic world (--world)");
      const int k = rest.empty() ? world->num_experts() : std::stoi(rest);
      if (k < 1 || k > world->num_experts())
        throw ConfigError("world has " + std::to_string(world->num_experts()) + " experts, asked for " + rest);
      for (int i = 0; i < k; ++i) out.push_back(std::make_shared<SyntheticExpert>(world, i));
      continue;
    }
    const auto eq = rest.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("expert spec '" + spec + "' needs NAME=TARGET");
    const std::string name = rest.substr(0, eq), target = rest.substr(eq + 1);
    if (kind == "command") {
      out.push_back(std::make_shared<CommandExpert>(name, split_command(target), work_dir / "work" / name));
    } else if (kind == "http") {
      out.push_back(std::make_shared<HttpExpert>(name, target, work_dir / "work" / name, env_or_empty("TIASU_TTS_TOKEN")));
    } else {
      throw ConfigError("unknown expert kind '" + kind + "'");
    }
  }
  if (out.empty()) throw ConfigError("no TTS experts given");
  return out;
}

std::unique_ptr<RephraseAdapter> make_rephraser(const std::string& spec, std::shared_ptr<const WorldParams> world,
                                                std::uint64_t seed, const std::string& model) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  std::unique_ptr<RephraseAdapter> r;
  if (kind == "canned") {
    r = std::make_unique<CannedRephraser>(CannedRephraser::from_file(rest));
  } else if (kind == "command") {
    r = std::make_unique<CommandRephraser>(split_command(rest));
  } else if (kind == "http") {
    r = std::make_unique<HttpRephraser>(rest, env_or_empty("TIASU_LLM_TOKEN"));
  } else if (kind == "resample") {
    if (!world) throw ConfigError("the resample rephraser needs a synthetic world (--world)");
    r = std::make_unique<ClassResampleRephraser>(world, seed);
  } else {
    throw ConfigError("unknown rephraser '" + spec + "'");
  }
  if (!model.empty()) r->model = model;
  return r;
}

// Text-only side for pool/augment: manifest rows without speech plus, with p,
// a seeded p-fraction of the speech-bearing rows. Test rows are excluded.
std::vector<Utterance> text_only_rows(const Corpus& corpus, std::optional<double> p, std::uint64_t seed) {
  Corpus train;
  train.num_classes = corpus.num_classes;
  std::vector<Utterance> out;
  for (const Utterance& u : corpus.utterances) {
    if (u.is_test()) continue;
    if (u.has_speech())
      train.utterances.push_back(u);
    else
      out.push_back(u);
  }
  if (p && *p > 0) {
    const PartitionedCorpus part = apply_missing(train, *p, seed);
    out.insert(out.end(), part.text_only.begin(), part.text_only.end());
  }
  return out;
}

CellSpec cell_from(const json& cfg, const CommonFlags& f) {
  json cell = cfg.contains("cell") ? cfg["cell"] : cfg;
  if (cell.contains("out")) cell.erase("out");
  if (auto m = single(f.method, "method")) cell["method"] = *m;
  CellSpec c = cell_spec_from_json(cell);
  if (auto s = single(f.seed, "seed")) c.seed = *s;
  if (auto p = single(f.p, "p")) c.p = *p;
  if (!f.q.empty()) c.qs = f.q;
  return c;
}

void print_json(std::ostream& out, const json& j) { out << j.dump(2) << '\n'; }

// --- subcommands -----------------------------------------------------------

int cmd_synth(const CommonFlags& f, const json& cfg, const std::string& profile, int n, int world_seed, int classes,
              int experts, std::ostream& out) {
  WorldSpec w = cfg.contains("world") ? world_spec_from_json(cfg["world"]) : WorldSpec{};
  if (!profile.empty()) w.profile = task_profile_from_string(profile);
  if (n > 0) w.n = n;
  if (world_seed >= 0) w.world_seed = static_cast<std::uint64_t>(world_seed);
  if (classes > 0) w.num_classes = classes;
  if (experts > 0) w.num_experts = experts;
  if (auto s = single(f.seed, "seed")) w.data_seed = *s;
  if (!f.method.empty()) spdlog::warn("synth ignores --method");
  if (!f.q.empty()) spdlog::warn("synth ignores --q");
  const auto dir = out_dir(f, cfg, "synth");
  const auto world = build_world(w);
  Corpus corpus = sample_corpus(*world, w.n, w.data_seed);
  if (auto p = single(f.p, "p"); p && *p > 0) {
    const PartitionedCorpus part = apply_missing(corpus, *p, w.data_seed);
    std::map<std::string, Utterance> by_id;
    for (const Utterance& u : part.text_only) by_id[u.id] = u;
    for (Utterance& u : corpus.utterances)
      if (by_id.count(u.id)) u = by_id[u.id];
  }
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "world.json", to_json(w).dump(2) + "\n");
  write_manifest(corpus, dir / "manifest.jsonl");
  print_json(out, {{"out", dir.string()}, {"utterances", corpus.size()}, {"world", to_json(w)}});
  return kExitOk;
}

int cmd_pool(const CommonFlags& f, const json& cfg, std::string world_dir, std::string manifest,
             std::vector<std::string> experts, std::string style, std::string cache, int threads, std::ostream& out) {
  if (world_dir.empty()) world_dir = cfg.value("world", std::string());
  if (manifest.empty()) manifest = cfg.value("manifest", world_dir.empty() ? std::string() : world_dir + "/manifest.jsonl");
  if (manifest.empty()) throw UsageError("pool needs --manifest or --world");
  if (experts.empty() && cfg.contains("experts")) experts = cfg["experts"].get<std::vector<std::string>>();
  if (experts.empty()) experts = {"synthetic:3"};
  if (style.empty()) style = cfg.value("style", std::string("none"));
  if (cache.empty()) cache = cfg.value("cache", std::string());
  if (threads <= 0) threads = cfg.value("threads", 1);
  if (!f.method.empty()) spdlog::warn("pool ignores --method");
  const std::uint64_t seed = single(f.seed, "seed").value_or(cfg.value("seed", std::uint64_t{1}));
  std::optional<double> p = single(f.p, "p");
  if (!p && cfg.contains("p")) p = cfg["p"].get<double>();

  const auto dir = out_dir(f, cfg, "pool");
  std::shared_ptr<const WorldParams> world;
  if (!world_dir.empty()) world = build_world(load_world_spec(world_dir));
  const Corpus corpus = load_manifest(manifest);
  const std::vector<Utterance> text_only = text_only_rows(corpus, p, seed);
  const auto adapters = make_experts(experts, world, dir);
  std::optional<CandidateCache> cc;
  if (!cache.empty()) cc.emplace(cache);
  PoolOptions po;
  po.seed = seed;
  po.cache = cc ? &*cc : nullptr;
  po.threads = threads;
  const GenerationPool pool = build_pool(text_only, adapters, style_policy_from_string(style), po);
  std::filesystem::create_directories(dir);
  write_pool_manifest(pool, dir / "pool.jsonl");
  print_json(out, {{"out", (dir / "pool.jsonl").string()},
                   {"text_only", text_only.size()},
                   {"experts", pool.experts},
                   {"candidates", pool.num_candidates()},
                   {"unimputable", pool.unimputable.size()}});
  return kExitOk;
}

int cmd_augment(const CommonFlags& f, const json& cfg, std::string world_dir, std::string manifest,
                std::vector<std::string> experts, std::string rephraser, std::string model, std::string prompt_file,
                std::ostream& out) {
  if (world_dir.empty()) world_dir = cfg.value("world", std::string());
  if (manifest.empty()) manifest = cfg.value("manifest", world_dir.empty() ? std::string() : world_dir + "/manifest.jsonl");
  if (manifest.empty()) throw UsageError("augment needs --manifest or --world");
  if (experts.empty() && cfg.contains("experts")) experts = cfg["experts"].get<std::vector<std::string>>();
  if (experts.empty()) experts = {"synthetic:3"};
  if (rephraser.empty()) rephraser = cfg.value("rephraser", std::string("resample"));
  if (model.empty()) model = cfg.value("llm_model", std::string());
  if (!f.method.empty()) spdlog::warn("augment ignores --method");
  const std::uint64_t seed = single(f.seed, "seed").value_or(cfg.value("seed", std::uint64_t{1}));
  std::optional<double> p = single(f.p, "p");
  if (!p && cfg.contains("p")) p = cfg["p"].get<double>();

  const auto dir = out_dir(f, cfg, "augment");
  std::shared_ptr<const WorldParams> world;
  if (!world_dir.empty()) world = build_world(load_world_spec(world_dir));
  const Corpus corpus = load_manifest(manifest);
  const std::vector<Utterance> text_only = text_only_rows(corpus, p, seed);
  const auto adapters = make_experts(experts, world, dir);
  const auto llm = make_rephraser(rephraser, world, seed, model);
  AugmentOptions ao;
  ao.pool.seed = seed;
  ao.rephrase.archive_dir = dir / "raw";
  if (!prompt_file.empty()) ao.rephrase.prompt_template = read_file(prompt_file);
  else if (cfg.contains("prompt_template")) ao.rephrase.prompt_template = cfg["prompt_template"].get<std::string>();
  const AugmentedSet set = build_aug_set(text_only, *llm, adapters, StylePolicy::kNone, ao);
  std::filesystem::create_directories(dir);
  write_aug_manifest(set, dir / "aug.jsonl");
  write_pool_manifest(aug_pool(set), dir / "aug_pool.jsonl", "aug_pool");
  print_json(out, {{"out", (dir / "aug.jsonl").string()},
                   {"rephrased", set.entries.size()},
                   {"skipped", set.skipped.size()},
                   {"candidates", set.num_candidates()}});
  return kExitOk;
}

json result_summary(const CellSpec& c, const CellResult& r) {
  json by_q = json::object();
  for (const auto& [q, m] : r.metrics_by_q) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", q);
    by_q[buf] = m;
  }
  return {{"method", to_string(c.method)}, {"p", c.p},      {"seed", c.seed},
          {"headline", to_string(c.metric)}, {"metrics", by_q}, {"best_epoch", r.history.best_epoch}};
}

int cmd_train(const CommonFlags& f, const json& cfg, int epochs, double lr, std::ostream& out) {
  CellSpec c = cell_from(cfg, f);
  if (epochs > 0) c.epochs = epochs;
  if (lr > 0) c.lr = lr;
  c.train_config().validate();
  const std::filesystem::path dir = out_dir(f, cfg, (std::filesystem::path("runs") / cell_key(c)).string());
  CellOptions co;
  co.run_dir = dir;
  const CellResult r = run_cell(c, co);
  json summary = result_summary(c, r);
  summary["run_dir"] = dir.string();
  write_file_atomic(dir / "metrics.json", summary.dump(2) + "\n");
  print_json(out, summary);
  return kExitOk;
}

int cmd_eval(const CommonFlags& f, const std::string& run, std::ostream& out) {
  if (run.empty()) throw UsageError("eval needs --run");
  const std::filesystem::path dir = run;
  const json cfg = json::parse(read_file(dir / "config.json"));
  if (!cfg.contains("cell")) throw InputError("run config lacks the cell snapshot");
  CellSpec c = cell_spec_from_json(cfg["cell"]);
  if (!f.method.empty() && f.method.front() != to_string(c.method))
    throw UsageError("--method does not match the run's method " + to_string(c.method));
  if (!f.p.empty() && f.p.front() != c.p) throw UsageError("--p does not match the run's p");
  if (auto s = single(f.seed, "seed")) c.seed = *s;  // reseeds test masking only
  const std::vector<double> qs = f.q.empty() ? c.qs : f.q;
  const Checkpoint ckpt = load_checkpoint(dir / "checkpoint.bin");
  const CellEvaluation ev = evaluate_cell(c, ckpt, qs);
  json by_q = json::object();
  for (const auto& [q, m] : ev.metrics_by_q) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", q);
    by_q[buf] = m;
    write_file_atomic(dir / (std::string("eval_predictions_q") + buf + ".csv"), predictions_csv(ev.predictions.at(q)));
  }
  json summary = {{"run_dir", dir.string()}, {"method", to_string(c.method)}, {"metrics", by_q}};
  write_file_atomic(dir / "eval.json", summary.dump(2) + "\n");
  print_json(out, summary);
  return kExitOk;
}

int cmd_grid(const CommonFlags& f, const json& cfg_in, int workers, bool isolate, std::ostream& out) {
  if (f.config.empty()) throw UsageError("grid needs --config");
  json cfg = cfg_in;
  if (!f.method.empty()) cfg["methods"] = f.method;
  if (!f.p.empty()) cfg["ps"] = f.p;
  if (!f.q.empty()) cfg["qs"] = f.q;
  if (!f.seed.empty()) cfg["seeds"] = f.seed;
  const GridConfig grid = grid_config_from_json(cfg);
  const std::filesystem::path dir = out_dir(f, cfg, "grid");
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "grid_config.json", to_json(grid).dump(2) + "\n");
  GridOptions go;
  go.journal = dir / "journal.jsonl";
  go.workers = workers;
  go.run_root = dir / "runs";
  if (isolate || cfg.value("isolate", false)) {
    const auto self = std::filesystem::read_symlink("/proc/self/exe");
    go.runner = process_cell_runner({self.string(), "cell", "--run-root", go.run_root.string()}, dir / "scratch");
  }
  const GridOutcome outcome = run_grid(grid, go);
  std::vector<std::string> files;
  if (!outcome.table.empty())
    for (const auto& p : emit_report(outcome.table, dir / "report")) files.push_back(p.string());
  print_json(out, {{"cells", outcome.executed + outcome.skipped + outcome.failed},
                   {"executed", outcome.executed},
                   {"skipped", outcome.skipped},
                   {"failed", outcome.failed},
                   {"failures", outcome.failures},
                   {"report", files}});
  return outcome.failed ? kExitFailure : kExitOk;
}

int cmd_report(const CommonFlags& f, const json& cfg, std::string results, std::vector<std::string> formats,
               std::ostream& out) {
  if (results.empty()) results = cfg.value("results", std::string());
  if (results.empty()) throw UsageError("report needs --results");
  ResultTable table = load_results(results);
  if (!f.method.empty() || !f.p.empty() || !f.q.empty() || !f.seed.empty()) {
    auto pick = [](const auto& list, const auto& v) {
      if (list.empty()) return true;
      for (const auto& x : list)
        if (x == v) return true;
      return false;
    };
    ResultTable kept;
    for (const ResultRow& r : table.raw_rows()) {
      if (!pick(f.method, r.key.method) || !pick(f.p, r.key.p) || !pick(f.q, r.key.q)) continue;
      if (!f.seed.empty() && !pick(f.seed, static_cast<std::uint64_t>(r.key.seed))) continue;
      kept.add(r);
    }
    if (kept.empty() && !table.aggregate_rows().empty() && table.raw_rows().empty()) {
      for (const ResultRow& r : table.aggregate_rows())
        if (pick(f.method, r.key.method) && pick(f.p, r.key.p) && pick(f.q, r.key.q)) kept.add(r);
    } else {
      kept.aggregate();
    }
    table = std::move(kept);
  }
  if (table.empty()) throw InputError("no result rows left to report");
  ReportOptions ro;
  if (!formats.empty()) ro.formats = {formats.begin(), formats.end()};
  std::vector<std::string> files;
  for (const auto& p : emit_report(table, out_dir(f, cfg, "report"), ro)) files.push_back(p.string());
  print_json(out, {{"report", files}});
  return kExitOk;
}

int cmd_cell(const std::string& spec_path, const std::string& result_path, const std::string& run_root) {
  const CellSpec c = cell_spec_from_json(json::parse(read_file(spec_path)));
  CellOptions co;
  if (!run_root.empty()) co.run_dir = std::filesystem::path(run_root) / cell_key(c);
  const CellResult r = run_cell(c, co);
  write_file_atomic(result_path, to_json(r).dump() + "\n");
  return kExitOk;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e)) return "ParseError";
  if (dynamic_cast<const ValidationError*>(&e)) return "ValidationError";
  if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const InputError*>(&e)) return "InputError";
  if (dynamic_cast<const AdapterError*>(&e)) return "AdapterError";
  if (dynamic_cast<const DivergenceError*>(&e)) return "DivergenceError";
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return "JsonError";
  return "Error";
}

}  // namespace

std::string interpolate_env(const std::string& s) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '$' && i + 1 < s.size() && s[i + 1] == '{') {
      const std::size_t close = s.find('}', i + 2);
      if (close == std::string::npos) throw ConfigError("unterminated ${ in '" + s + "'");
      std::string body = s.substr(i + 2, close - i - 2);
      std::optional<std::string> fallback;
      if (const auto d = body.find(":-"); d != std::string::npos) {
        fallback = body.substr(d + 2);
        body = body.substr(0, d);
      }
      if (body.empty()) throw ConfigError("empty variable name in '" + s + "'");
      const char* v = std::getenv(body.c_str());
      if (v && *v)
        out += v;
      else if (fallback)
        out += *fallback;
      else
        throw ConfigError("environment variable " + body + " is not set");
      i = close + 1;
    } else {
      out += s[i++];
    }
  }
  return out;
}

json interpolate_env(const json& j) {
  if (j.is_string()) return interpolate_env(j.get<std::string>());
  if (j.is_object()) {
    json out = json::object();
    for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = interpolate_env(it.value());
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const json& e : j) out.push_back(interpolate_env(e));
    return out;
  }
  return j;
}

json load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config " + path.string() + " must be a JSON object");
  return interpolate_env(j);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  ensure_stderr_logger();
  CLI::App app{"tiasu: missing-speech imputation with multi-expert TTS"};
  app.name("tiasu");
  app.require_subcommand(1);

  CommonFlags flags;

  auto* synth = app.add_subcommand("synth", "Sample a synthetic world and corpus");
  add_common(synth, flags);
  std::string profile;
  int n = 0, world_seed = -1, classes = 0, num_experts = 0;
  synth->add_option("--profile", profile, "content_dominant or prosody_dominant");
  synth->add_option("--n", n, "Number of utterances");
  synth->add_option("--world-seed", world_seed, "World parameter seed");
  synth->add_option("--classes", classes, "Number of classes");
  synth->add_option("--num-experts", num_experts, "Number of TTS experts in the world");

  auto* pool = app.add_subcommand("pool", "Generate the multi-expert speech pool for text-only utterances");
  add_common(pool, flags);
  std::string world_dir, manifest, style, cache;
  std::vector<std::string> experts;
  int threads = 0;
  pool->add_option("--world", world_dir, "Directory written by synth");
  pool->add_option("--manifest", manifest, "Corpus manifest (JSONL)");
  pool->add_option("--experts", experts, "synthetic:K | command:NAME=CMD | http:NAME=URL")->delimiter(',');
  pool->add_option("--style", style, "none or label_style");
  pool->add_option("--cache", cache, "Candidate cache directory");
  pool->add_option("--threads", threads, "Generation threads");

  auto* augment = app.add_subcommand("augment", "Rephrase text-only transcripts and synthesize speech for them");
  add_common(augment, flags);
  std::string rephraser, llm_model, prompt_file;
  augment->add_option("--world", world_dir, "Directory written by synth");
  augment->add_option("--manifest", manifest, "Corpus manifest (JSONL)");
  augment->add_option("--experts", experts, "TTS experts")->delimiter(',');
  augment->add_option("--rephraser", rephraser, "canned:FILE | command:CMD | http:URL | resample");
  augment->add_option("--llm-model", llm_model, "Model name sent to the rephraser");
  augment->add_option("--prompt-file", prompt_file, "Prompt template file");

  auto* train = app.add_subcommand("train", "Train one method on one cell and write a run directory");
  add_common(train, flags);
  int epochs = 0;
  double lr = 0;
  train->add_option("--epochs", epochs, "Maximum epochs");
  train->add_option("--lr", lr, "Learning rate");

  auto* eval = app.add_subcommand("eval", "Re-evaluate a run directory at test missing ratios");
  add_common(eval, flags);
  std::string run;
  eval->add_option("--run", run, "Run directory");

  auto* grid = app.add_subcommand("grid", "Run the experiment grid and emit the report");
  add_common(grid, flags);
  int workers = 0;
  bool isolate = false;
  grid->add_option("--workers", workers, "Parallel cells");
  grid->add_flag("--isolate", isolate, "Run each cell in its own process");

  auto* report = app.add_subcommand("report", "Render CSV/JSON/markdown/SVG reports from results");
  add_common(report, flags);
  std::string results;
  std::vector<std::string> formats;
  report->add_option("--results", results, "results.csv, results.json or journal.jsonl");
  report->add_option("--formats", formats, "csv,json,md,svg")->delimiter(',');

  auto* cell = app.add_subcommand("cell", "");  // internal grid worker
  cell->group("");
  std::string cell_spec, cell_result, run_root;
  cell->add_option("spec", cell_spec)->required();
  cell->add_option("result", cell_result)->required();
  cell->add_option("--run-root", run_root);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    const json cfg = config_of(flags);
    if (synth->parsed()) return cmd_synth(flags, cfg, profile, n, world_seed, classes, num_experts, out);
    if (pool->parsed()) return cmd_pool(flags, cfg, world_dir, manifest, experts, style, cache, threads, out);
    if (augment->parsed())
      return cmd_augment(flags, cfg, world_dir, manifest, experts, rephraser, llm_model, prompt_file, out);
    if (train->parsed()) return cmd_train(flags, cfg, epochs, lr, out);
    if (eval->parsed()) return cmd_eval(flags, run, out);
    if (grid->parsed()) return cmd_grid(flags, cfg, workers, isolate, out);
    if (report->parsed()) return cmd_report(flags, cfg, results, formats, out);
    if (cell->parsed()) return cmd_cell(cell_spec, cell_result, run_root);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << json{{"error", error_kind(e)}, {"message", e.what()}}.dump() << '\n';
    return kExitFailure;
  }
  err << app.help();
  return kExitUsage;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace tiasu
