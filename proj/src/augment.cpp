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

#include "tiasu/augment.h"

#include "tiasu/npy.h"
#include "tiasu/process.h"
#include "tiasu/rng.h"
#include "tiasu/tokens.h"

#include "httplib.h"
#include "json.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace tiasu {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string squash_spaces(const std::string& s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(c);
  }
  return out;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> lines;
  std::istringstream in(s);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

bool strip_pair(std::string& s, const std::string& open, const std::string& close) {
  if (s.size() >= open.size() + close.size() && s.compare(0, open.size(), open) == 0 &&
      s.compare(s.size() - close.size(), close.size(), close) == 0) {
    s = trim(s.substr(open.size(), s.size() - open.size() - close.size()));
    return true;
  }
  return false;
}

void parse_url(const std::string& url, std::string& host, int& port, std::string& path) {
  const std::string prefix = "http://";
  if (url.rfind(prefix, 0) != 0) throw ConfigError("url must start with http://: " + url);
  std::string rest = url.substr(prefix.size());
  const auto slash = rest.find('/');
  path = slash == std::string::npos ? "/" : rest.substr(slash);
  std::string hostport = rest.substr(0, slash);
  const auto colon = hostport.find(':');
  if (colon != std::string::npos) {
    port = std::stoi(hostport.substr(colon + 1));
    hostport = hostport.substr(0, colon);
  }
  host = hostport;
}

}  // namespace

std::string build_prompt(const std::string& text, const std::string& prompt_template) {
  if (trim(text).empty()) throw InputError("cannot build a prompt for an empty transcript");
  const auto pos = prompt_template.find(kPromptPlaceholder);
  if (pos == std::string::npos) throw ConfigError("prompt template lacks the TRANSCRIPTIONS placeholder");
  std::string out = prompt_template;
  out.replace(pos, std::char_traits<char>::length(kPromptPlaceholder), text);
  return out;
}

std::optional<std::string> postprocess_response(const std::string& raw, const std::string& prompt,
                                                const std::string& prompt_template) {
  if (squash_spaces(raw) == squash_spaces(prompt)) return std::nullopt;

  // Instruction lines are the template lines that do not carry the transcript.
  std::vector<std::string> instructions;
  for (const auto& line : split_lines(prompt_template)) {
    if (line.find(kPromptPlaceholder) != std::string::npos) continue;
    const std::string t = trim(line);
    if (!t.empty()) instructions.push_back(t);
  }
  std::string body;
  for (const auto& line : split_lines(raw)) {
    std::string t = trim(line);
    for (const auto& ins : instructions)
      while (t.rfind(ins, 0) == 0) t = trim(t.substr(ins.size()));
    if (t.empty()) continue;
    if (!body.empty()) body.push_back(' ');
    body += t;
  }
  body = squash_spaces(body);
  for (bool changed = true; changed;) {
    changed = strip_pair(body, "\"", "\"") || strip_pair(body, "'", "'") ||
              strip_pair(body, "\xE2\x80\x9C", "\xE2\x80\x9D") || strip_pair(body, "`", "`");
  }
  if (body.empty()) return std::nullopt;
  return body;
}

CannedRephraser::CannedRephraser(std::map<std::string, std::string> responses) : responses_(std::move(responses)) {}

CannedRephraser CannedRephraser::from_file(const fs::path& path) {
  const json j = json::parse(read_file(path));
  std::map<std::string, std::string> m;
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) m[it.key()] = it.value().get<std::string>();
  } else if (j.is_array()) {
    for (const auto& row : j) m[row.at("text").get<std::string>()] = row.at("response").get<std::string>();
  } else {
    throw ParseError(path.string() + ": expected an object or an array of rows");
  }
  return CannedRephraser(std::move(m));
}

std::string CannedRephraser::complete(const RephraseRequest& request) const {
  auto it = responses_.find(request.text);
  if (it == responses_.end()) throw AdapterError("no recorded response for '" + request.text + "'");
  return it->second;
}

CommandRephraser::CommandRephraser(std::vector<std::string> command) : command_(std::move(command)) {
  if (command_.empty()) throw ConfigError("command rephraser has no command");
}

std::string CommandRephraser::complete(const RephraseRequest& request) const {
  const ProcessResult r = run_process(command_, timeout_seconds, request.prompt);
  if (r.timed_out) throw AdapterError("rephrase command timed out");
  if (r.exit_code != 0) throw AdapterError("rephrase command exited with status " + std::to_string(r.exit_code));
  return r.output;
}

HttpRephraser::HttpRephraser(std::string url, std::string auth_token) : auth_token_(std::move(auth_token)) {
  parse_url(url, host_, port_, path_);
}

std::string HttpRephraser::complete(const RephraseRequest& request) const {
  httplib::Client client(host_, port_);
  client.set_connection_timeout(timeout_seconds, 0);
  client.set_read_timeout(timeout_seconds, 0);
  httplib::Headers headers;
  if (!auth_token_.empty()) headers.emplace("Authorization", "Bearer " + auth_token_);
  const json body = {{"model", model}, {"prompt", request.prompt}, {"stream", false}};
  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw AdapterError("rephrase request failed (" + httplib::to_string(res.error()) + ")");
  if (res->status != 200) throw AdapterError("rephrase service returned HTTP " + std::to_string(res->status));
  const json reply = json::parse(res->body, nullptr, false);
  if (reply.is_object()) {
    if (reply.contains("response")) return reply["response"].get<std::string>();
    if (reply.contains("text")) return reply["text"].get<std::string>();
  }
  return res->body;
}

ClassResampleRephraser::ClassResampleRephraser(std::shared_ptr<const WorldParams> world, std::uint64_t seed)
    : world_(std::move(world)), seed_(seed) {
  if (!world_) throw ConfigError("class-resample rephraser needs a world");
}

std::string ClassResampleRephraser::complete(const RephraseRequest& request) const {
  Rng rng = make_stream(seed_, "rephrase", {fnv1a64(request.id)});
  return detokenize(sample_tokens(*world_, request.label, rng));
}

RephraseOutcome rephrase(const RephraseAdapter& adapter, const Utterance& u, const RephraseOptions& options) {
  RephraseOutcome out;
  RephraseRequest req{u.id, u.text, u.label, build_prompt(u.text, options.prompt_template)};
  fs::path archived;
  if (!options.archive_dir.empty()) {
    fs::create_directories(options.archive_dir);
    archived = options.archive_dir /
               (hex64(fnv1a64(adapter.name() + "\n" + adapter.model + "\n" + req.id + "\n" + req.prompt)) + ".txt");
  }
  bool have = false;
  if (!archived.empty() && fs::exists(archived)) {
    out.raw = read_file(archived);
    have = true;
  }
  for (int attempt = 0; !have && attempt <= adapter.retries; ++attempt) {
    try {
      out.raw = adapter.complete(req);
      have = true;
    } catch (const AdapterError& e) {
      out.error = e.what();
    }
  }
  if (!have) {
    spdlog::warn("rephrase of {} failed, keeping the original only: {}", u.id, out.error);
    return out;
  }
  if (!archived.empty()) {
    if (!fs::exists(archived)) write_file_atomic(archived, out.raw);
    out.raw_response_path = archived.string();
  }
  out.text = postprocess_response(out.raw, req.prompt, options.prompt_template);
  if (!out.text) {
    out.error = "response rejected (empty or echo of the prompt)";
    spdlog::warn("rephrase of {}: {}", u.id, out.error);
  }
  return out;
}

std::size_t AugmentedSet::num_candidates() const {
  std::size_t n = 0;
  for (const auto& [id, e] : entries) n += e.candidates.size();
  return n;
}

AugmentedSet build_aug_set(const std::vector<Utterance>& text_only, const RephraseAdapter& adapter,
                           const std::vector<std::shared_ptr<const ExpertAdapter>>& experts, StylePolicy style_policy,
                           const AugmentOptions& options) {
  AugmentedSet set;
  std::vector<Utterance> rephrased;
  std::map<std::string, RephraseOutcome> outcomes;
  for (const auto& u : text_only) {
    if (u.is_test()) throw InputError("refusing to augment test utterance " + u.id);
    RephraseOutcome o = rephrase(adapter, u, options.rephrase);
    if (!o.text) {
      set.skipped.insert(u.id);
      continue;
    }
    Utterance v = u;
    v.text = *o.text;
    v.speech.reset();
    rephrased.push_back(std::move(v));
    outcomes.emplace(u.id, std::move(o));
  }
  PoolOptions pool_options = options.pool;
  pool_options.salt = "aug";
  GenerationPool pool = rephrased.empty() ? GenerationPool{} : build_pool(rephrased, experts, style_policy, pool_options);
  for (const auto& v : rephrased) {
    auto it = pool.entries.find(v.id);
    if (it == pool.entries.end()) {
      set.skipped.insert(v.id);
      continue;
    }
    const auto& orig = std::find_if(text_only.begin(), text_only.end(), [&](const Utterance& u) { return u.id == v.id; });
    AugEntry e;
    e.text_orig = orig->text;
    e.text_aug = v.text;
    e.label = v.label;
    e.adapter = adapter.name();
    e.raw_response_path = outcomes[v.id].raw_response_path;
    e.candidates = std::move(it->second);
    set.entries.emplace(v.id, std::move(e));
  }
  return set;
}

void write_aug_manifest(const AugmentedSet& set, const fs::path& path) {
  std::string out;
  for (const auto& [id, e] : set.entries) {
    const json row = {{"id", id},
                      {"text_orig", e.text_orig},
                      {"text_aug", e.text_aug},
                      {"adapter", e.adapter},
                      {"raw_response_path", e.raw_response_path.empty() ? json(nullptr) : json(e.raw_response_path)}};
    out += row.dump() + "\n";
  }
  write_file_atomic(path, out);
}

GenerationPool aug_pool(const AugmentedSet& set) {
  GenerationPool pool;
  for (const auto& [id, e] : set.entries) {
    for (const auto& c : e.candidates) {
      if (std::find(pool.experts.begin(), pool.experts.end(), c.expert) == pool.experts.end())
        pool.experts.push_back(c.expert);
      if (c.style) pool.style_policy = StylePolicy::kLabelStyle;
    }
    pool.entries[id] = e.candidates;
  }
  return pool;
}

}  // namespace tiasu
