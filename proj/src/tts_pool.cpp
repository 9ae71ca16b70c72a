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

#include "tiasu/tts_pool.h"

#include "tiasu/npy.h"
#include "tiasu/process.h"
#include "tiasu/tokens.h"

#include "httplib.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <thread>

namespace tiasu {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(StylePolicy s) { return s == StylePolicy::kLabelStyle ? "label_style" : "none"; }

StylePolicy style_policy_from_string(const std::string& s) {
  if (s == "none") return StylePolicy::kNone;
  if (s == "label_style") return StylePolicy::kLabelStyle;
  throw ConfigError("unknown style policy '" + s + "'");
}

std::string to_string(AdapterMode m) {
  switch (m) {
    case AdapterMode::kSynthetic: return "synthetic";
    case AdapterMode::kCommand: return "command";
    case AdapterMode::kHttp: return "http";
  }
  return "synthetic";
}

std::string to_string(ImputePolicy p) {
  switch (p) {
    case ImputePolicy::kTts: return "tts";
    case ImputePolicy::kZero: return "zero";
    case ImputePolicy::kDrop: return "drop";
  }
  return "drop";
}

json to_json(const GenerationRequest& r) {
  return {{"text", r.text}, {"style", r.style ? json(*r.style) : json(nullptr)}, {"seed", r.seed}};
}

SyntheticExpert::SyntheticExpert(std::shared_ptr<const WorldParams> world, int expert_id)
    : world_(std::move(world)), expert_id_(expert_id) {
  if (!world_) throw ConfigError("synthetic expert needs a world");
  if (expert_id_ < 0 || expert_id_ >= world_->num_experts())
    throw ConfigError("world has no expert " + std::to_string(expert_id_));
}

SpeechPayload SyntheticExpert::generate(const GenerationRequest& request) const {
  const auto tokens = tokenize(request.text, world_->vocab);
  if (tokens.empty()) throw AdapterError(name() + ": empty transcript");
  return make_payload(expert_generate(*world_, expert_id_, tokens, request.style, request.seed));
}

SpeechPayload payload_from_bytes(const std::string& bytes, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  if (looks_like_npy(bytes)) {
    FrameMatrix frames = frames_from_npy(parse_npy(bytes));
    if (frames.rows() < 1 || !frames.allFinite()) throw AdapterError("generated frame array is empty or non-finite");
    const fs::path path = dir / (stem + ".npy");
    write_file_atomic(path, bytes);
    SpeechPayload p = make_payload(std::move(frames));
    p.audio_path = path.string();
    return p;
  }
  if (bytes.size() >= 12 && bytes.compare(0, 4, "RIFF") == 0 && bytes.compare(8, 4, "WAVE") == 0) {
    const fs::path path = dir / (stem + ".wav");
    write_file_atomic(path, bytes);
    SpeechPayload p;
    p.audio_path = path.string();
    return p;
  }
  throw AdapterError("generated payload is neither a .npy array nor a WAV file");
}

CommandExpert::CommandExpert(std::string name, std::vector<std::string> command, fs::path work_dir)
    : name_(std::move(name)), command_(std::move(command)), work_dir_(std::move(work_dir)) {
  if (command_.empty()) throw ConfigError("command expert '" + name_ + "' has no command");
}

SpeechPayload CommandExpert::generate(const GenerationRequest& request) const {
  fs::create_directories(work_dir_);
  const std::string stem = CandidateCache::key(name_, request);
  const fs::path out = work_dir_ / (stem + ".out");
  std::vector<std::string> argv = command_;
  argv.push_back(out.string());
  const ProcessResult r = run_process(argv, timeout_seconds, to_json(request).dump() + "\n");
  if (r.timed_out) throw AdapterError(name_ + ": timed out after " + std::to_string(timeout_seconds) + "s");
  if (r.exit_code != 0) throw AdapterError(name_ + ": exited with status " + std::to_string(r.exit_code));
  if (!fs::exists(out)) throw AdapterError(name_ + ": produced no output file");
  const std::string bytes = read_file(out);
  fs::remove(out);
  return payload_from_bytes(bytes, work_dir_, stem);
}

HttpExpert::HttpExpert(std::string name, std::string url, fs::path work_dir, std::string auth_token)
    : name_(std::move(name)), work_dir_(std::move(work_dir)), auth_token_(std::move(auth_token)) {
  const std::string prefix = "http://";
  if (url.rfind(prefix, 0) != 0) throw ConfigError("http expert url must start with http://: " + url);
  std::string rest = url.substr(prefix.size());
  const auto slash = rest.find('/');
  path_ = slash == std::string::npos ? "/" : rest.substr(slash);
  std::string hostport = rest.substr(0, slash);
  const auto colon = hostport.find(':');
  if (colon != std::string::npos) {
    port_ = std::stoi(hostport.substr(colon + 1));
    hostport = hostport.substr(0, colon);
  }
  host_ = hostport;
}

SpeechPayload HttpExpert::generate(const GenerationRequest& request) const {
  httplib::Client client(host_, port_);
  client.set_connection_timeout(timeout_seconds, 0);
  client.set_read_timeout(timeout_seconds, 0);
  client.set_write_timeout(timeout_seconds, 0);
  httplib::Headers headers;
  if (!auth_token_.empty()) headers.emplace("Authorization", "Bearer " + auth_token_);
  auto res = client.Post(path_, headers, to_json(request).dump(), "application/json");
  if (!res) throw AdapterError(name_ + ": request failed (" + httplib::to_string(res.error()) + ")");
  if (res->status != 200) throw AdapterError(name_ + ": HTTP status " + std::to_string(res->status));
  return payload_from_bytes(res->body, work_dir_, CandidateCache::key(name_, request));
}

CandidateCache::CandidateCache(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

std::string CandidateCache::key(const std::string& adapter, const GenerationRequest& r) {
  std::string material = adapter;
  material += '\n';
  material += hex64(fnv1a64(r.text));
  material += '\n';
  material += r.style ? std::to_string(*r.style) : "-";
  material += '\n';
  material += std::to_string(r.seed);
  return hex64(fnv1a64(material));
}

std::optional<SpeechPayload> CandidateCache::get(const std::string& adapter, const GenerationRequest& r) const {
  const std::string k = key(adapter, r);
  const fs::path npy = dir_ / (k + ".npy");
  if (fs::exists(npy)) {
    SpeechPayload p = make_payload(read_frames_npy(npy), "gen:" + k);
    p.audio_path = npy.string();
    return p;
  }
  const fs::path wav = dir_ / (k + ".wav");
  if (fs::exists(wav)) {
    SpeechPayload p;
    p.audio_path = wav.string();
    p.key = "gen:" + k;
    return p;
  }
  return std::nullopt;
}

SpeechPayload CandidateCache::put(const std::string& adapter, const GenerationRequest& r,
                                  const SpeechPayload& payload) const {
  const std::string k = key(adapter, r);
  SpeechPayload out = payload;
  out.key = "gen:" + k;
  if (payload.has_frames()) {
    const fs::path path = dir_ / (k + ".npy");
    write_frames_npy(path, *payload.frames);
    out.audio_path = path.string();
  } else if (!payload.audio_path.empty()) {
    const fs::path path = dir_ / (k + fs::path(payload.audio_path).extension().string());
    write_file_atomic(path, read_file(payload.audio_path));
    out.audio_path = path.string();
  } else {
    throw AdapterError("cannot cache an empty payload");
  }
  return out;
}

SpeechPayload generate_with_retries(const ExpertAdapter& adapter, const GenerationRequest& request,
                                    const CandidateCache* cache) {
  const std::string name = adapter.name();
  if (cache) {
    if (auto hit = cache->get(name, request)) return *hit;
  }
  std::string last;
  for (int attempt = 0; attempt <= adapter.retries; ++attempt) {
    try {
      SpeechPayload p = adapter.generate(request);
      if (cache) return cache->put(name, request, p);
      if (p.key.empty()) p.key = "gen:" + CandidateCache::key(name, request);
      return p;
    } catch (const AdapterError& e) {
      last = e.what();
      spdlog::warn("{} attempt {} failed: {}", name, attempt + 1, last);
    }
  }
  throw AdapterError(name + ": all attempts failed; last error: " + last);
}

std::size_t GenerationPool::num_candidates() const {
  std::size_t n = 0;
  for (const auto& [id, c] : entries) n += c.size();
  return n;
}

bool GenerationPool::covers(const std::string& id) const {
  auto it = entries.find(id);
  return it != entries.end() && !it->second.empty();
}

std::uint64_t generation_seed(std::uint64_t seed, const std::string& salt, const std::string& id, int expert_index) {
  return mix64(seed ^ mix64(fnv1a64(salt) ^ mix64(fnv1a64(id) + static_cast<std::uint64_t>(expert_index))));
}

GenerationPool build_pool(const std::vector<Utterance>& text_only,
                          const std::vector<std::shared_ptr<const ExpertAdapter>>& adapters, StylePolicy style_policy,
                          const PoolOptions& options) {
  if (adapters.empty()) throw ConfigError("build_pool needs at least one expert adapter");
  for (const auto& u : text_only) {
    if (u.is_test()) throw InputError("refusing to impute test utterance " + u.id);
    if (u.text.empty()) throw InputError("utterance " + u.id + " has no text");
  }
  GenerationPool pool;
  pool.style_policy = style_policy;
  for (const auto& a : adapters) pool.experts.push_back(a->name());

  const std::size_t k = adapters.size();
  const std::size_t jobs = text_only.size() * k;
  std::vector<std::optional<SpeechCandidate>> results(jobs);
  std::vector<std::string> errors(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      const Utterance& u = text_only[j / k];
      const int e = static_cast<int>(j % k);
      GenerationRequest req;
      req.text = u.text;
      if (style_policy == StylePolicy::kLabelStyle) req.style = u.label;
      req.seed = generation_seed(options.seed, options.salt, u.id, e);
      try {
        SpeechCandidate c;
        c.payload = generate_with_retries(*adapters[static_cast<std::size_t>(e)], req, options.cache);
        c.expert = pool.experts[static_cast<std::size_t>(e)];
        c.expert_index = e;
        c.style = req.style;
        c.seed = req.seed;
        results[j] = std::move(c);
      } catch (const Error& err) {
        errors[j] = err.what();
      }
    }
  };
  const int threads = std::max(1, options.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool_threads;
    for (int t = 0; t < threads; ++t) pool_threads.emplace_back(worker);
    for (auto& t : pool_threads) t.join();
  }

  for (std::size_t i = 0; i < text_only.size(); ++i) {
    const std::string& id = text_only[i].id;
    std::vector<SpeechCandidate> cands;
    for (std::size_t e = 0; e < k; ++e) {
      auto& r = results[i * k + e];
      if (r) {
        cands.push_back(std::move(*r));
      } else {
        pool.gaps.emplace_back(id, pool.experts[e]);
      }
    }
    if (cands.empty()) {
      pool.unimputable.insert(id);
      spdlog::warn("utterance {} is unimputable ({}); it will be zero-filled", id, errors[i * k]);
    } else {
      pool.entries[id] = std::move(cands);
    }
  }
  return pool;
}

const SpeechCandidate& sample_imputation(const GenerationPool& pool, const std::string& id, Rng& rng) {
  auto it = pool.entries.find(id);
  if (it == pool.entries.end() || it->second.empty()) throw InputError("no candidates for utterance " + id);
  return it->second[uniform_below(rng, it->second.size())];
}

void write_pool_manifest(const GenerationPool& pool, const fs::path& path, const std::string& payload_dir) {
  const fs::path base = path.parent_path();
  std::string out;
  for (const auto& [id, cands] : pool.entries) {
    for (const auto& c : cands) {
      std::string rel;
      if (c.payload.has_frames()) {
        rel = (fs::path(payload_dir) / (id + "." + std::to_string(c.expert_index) + ".npy")).generic_string();
        write_frames_npy(base / rel, *c.payload.frames);
      } else {
        rel = c.payload.audio_path;
      }
      json row = {{"id", id},
                  {"expert", c.expert},
                  {"style", c.style ? json(*c.style) : json(nullptr)},
                  {"payload_path", rel},
                  {"seed", c.seed}};
      out += row.dump() + "\n";
    }
  }
  write_file_atomic(path, out);
}

GenerationPool read_pool_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open pool manifest " + path.string());
  GenerationPool pool;
  std::string line;
  std::size_t lineno = 0;
  bool any_style = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), lineno);
    }
    try {
      SpeechCandidate c;
      const std::string id = row.at("id").get<std::string>();
      c.expert = row.at("expert").get<std::string>();
      auto pos = std::find(pool.experts.begin(), pool.experts.end(), c.expert);
      if (pos == pool.experts.end()) pos = pool.experts.insert(pool.experts.end(), c.expert);
      c.expert_index = static_cast<int>(pos - pool.experts.begin());
      if (!row.at("style").is_null()) {
        c.style = row.at("style").get<int>();
        any_style = true;
      }
      c.seed = row.at("seed").get<std::uint64_t>();
      fs::path p = row.at("payload_path").get<std::string>();
      if (p.is_relative()) p = path.parent_path() / p;
      if (p.extension() == ".npy") {
        c.payload = make_payload(read_frames_npy(p));
      }
      c.payload.audio_path = p.string();
      c.payload.key = "gen:" + id + ":" + c.expert + ":" + std::to_string(c.seed);
      pool.entries[id].push_back(std::move(c));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), lineno);
    }
  }
  pool.style_policy = any_style ? StylePolicy::kLabelStyle : StylePolicy::kNone;
  return pool;
}

SpeechPayload zero_payload(Eigen::Index frames, Eigen::Index dim) {
  if (frames < 1 || dim < 1) throw InputError("zero payload needs positive frames and dimension");
  return make_payload(FrameMatrix::Zero(frames, dim), "zero:" + std::to_string(frames) + "x" + std::to_string(dim));
}

Utterance zero_fill(const Utterance& u, Eigen::Index nominal_frames, Eigen::Index dim) {
  if (u.has_speech()) throw InputError("zero_fill expects an utterance without speech: " + u.id);
  Utterance out = u;
  out.speech = zero_payload(nominal_frames, dim);
  out.provenance = Provenance::kZeroFilled;
  return out;
}

Eigen::Index median_frames(const std::vector<Utterance>& utterances) {
  std::vector<Eigen::Index> t;
  for (const auto& u : utterances)
    if (u.has_speech() && u.speech->has_frames()) t.push_back(u.speech->num_frames());
  if (t.empty()) return 0;
  std::sort(t.begin(), t.end());
  return t[(t.size() - 1) / 2];
}

ImputedView impute_dataset(const PartitionedCorpus& partition, const GenerationPool* pool, ImputePolicy policy,
                           const ImputeOptions& options) {
  ImputedView view;
  view.policy = policy;
  view.pool = pool;
  view.num_classes = partition.num_classes;
  view.complete = partition.complete;
  view.dim = options.dim;
  if (view.dim == 0) {
    for (const auto& u : partition.complete)
      if (u.has_speech() && u.speech->has_frames()) {
        view.dim = u.speech->frames->cols();
        break;
      }
  }
  view.nominal_frames = median_frames(partition.complete);
  if (view.nominal_frames == 0) view.nominal_frames = options.fallback_frames;

  if (policy == ImputePolicy::kDrop || partition.text_only.empty()) return view;
  if (view.nominal_frames < 1 || view.dim < 1)
    throw ConfigError("cannot size zero payloads: no complete utterances and no fallback shape");

  for (const auto& u : partition.text_only) {
    if (u.is_test()) throw InputError("refusing to impute test utterance " + u.id);
    if (policy == ImputePolicy::kZero) {
      view.text_only.push_back(zero_fill(u, view.nominal_frames, view.dim));
      continue;
    }
    if (!pool) throw ConfigError("tts imputation needs a generation pool");
    if (!pool->covers(u.id)) view.gaps.insert(u.id);
    view.text_only.push_back(u);
  }
  if (!view.gaps.empty())
    spdlog::warn("{} text-only utterances have no generated candidates; zero-filling them", view.gaps.size());
  return view;
}

}  // namespace tiasu
