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

#include "tiasu/corpus.h"

#include "tiasu/npy.h"
#include "tiasu/rng.h"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_set>

namespace tiasu {

using nlohmann::json;

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::kReal: return "real";
    case Provenance::kGenerated: return "generated";
    case Provenance::kZeroFilled: return "zero_filled";
  }
  return "real";
}

SpeechPayload make_payload(FrameMatrix frames, std::string key) {
  SpeechPayload p;
  p.frames = std::make_shared<const FrameMatrix>(std::move(frames));
  p.key = std::move(key);
  return p;
}

void Corpus::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& u : utterances) {
    if (u.id.empty()) throw ValidationError("utterance with empty id");
    if (!seen.insert(u.id).second) throw ValidationError("duplicate utterance id '" + u.id + "'");
    if (u.text.empty()) throw ValidationError("utterance '" + u.id + "' has empty text");
    if (u.label < 0 || u.label >= num_classes)
      throw ValidationError("utterance '" + u.id + "' label " + std::to_string(u.label) +
                            " outside [0, " + std::to_string(num_classes) + ")");
  }
}

const Utterance& Corpus::at(const std::string& id) const {
  for (const auto& u : utterances)
    if (u.id == id) return u;
  throw InputError("unknown utterance id '" + id + "'");
}

Corpus load_manifest(const std::filesystem::path& path, const ManifestOptions& options) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path.string());
  const auto base = path.parent_path();

  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ": invalid JSON: " + e.what(), line_no);
    }
    Utterance u;
    try {
      if (!row.is_object()) throw ParseError("row is not an object", line_no);
      u.id = row.at("id").get<std::string>();
      u.text = row.at("text").get<std::string>();
      u.label = row.at("label").get<int>();
      u.speaker = row.at("speaker").get<std::string>();
      if (row.contains("split") && !row["split"].is_null()) u.split = row["split"].get<std::string>();
      if (row.contains("audio_path") && !row["audio_path"].is_null()) {
        std::filesystem::path audio = row["audio_path"].get<std::string>();
        if (audio.is_relative()) audio = base / audio;
        SpeechPayload payload;
        payload.audio_path = audio.string();
        payload.key = u.id;
        if (options.load_frames && audio.extension() == ".npy")
          payload.frames = std::make_shared<const FrameMatrix>(read_frames_npy(audio));
        u.speech = std::move(payload);
      }
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": schema violation: " + e.what(), line_no);
    }
    max_label = std::max(max_label, u.label);
    corpus.utterances.push_back(std::move(u));
  }
  corpus.num_classes = options.num_classes > 0 ? options.num_classes : max_label + 1;
  corpus.validate();
  return corpus;
}

void write_manifest(const Corpus& corpus, const std::filesystem::path& path,
                    const std::string& payload_dir) {
  const auto base = path.parent_path();
  if (!base.empty()) std::filesystem::create_directories(base);
  std::string out;
  for (const auto& u : corpus.utterances) {
    json row = {{"id", u.id}, {"text", u.text}, {"label", u.label}, {"speaker", u.speaker}};
    if (u.speech) {
      std::string rel;
      if (u.speech->has_frames()) {
        rel = payload_dir + "/" + u.id + ".npy";
        write_frames_npy(base / rel, *u.speech->frames);
      } else {
        rel = u.speech->audio_path;
      }
      row["audio_path"] = rel;
    } else {
      row["audio_path"] = nullptr;
    }
    row["split"] = u.split ? json(*u.split) : json(nullptr);
    out += row.dump() + "\n";
  }
  write_file_atomic(path, out);
}

PartitionedCorpus apply_missing(const Corpus& corpus, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw InputError("missing ratio p must lie in [0, 1]");
  const std::size_t n = corpus.size();
  const std::size_t count = round_half_up(p, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_stream(seed, "train_missing");
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<char> stripped(n, 0);
  for (std::size_t i = 0; i < count; ++i) stripped[order[i]] = 1;

  PartitionedCorpus out;
  out.p = p;
  out.seed = seed;
  out.num_classes = corpus.num_classes;
  for (std::size_t i = 0; i < n; ++i) {
    Utterance u = corpus.utterances[i];
    if (stripped[i]) {
      u.speech.reset();
      out.text_only.push_back(std::move(u));
    } else {
      out.complete.push_back(std::move(u));
    }
  }
  return out;
}

std::string to_string(SplitScheme s) {
  switch (s) {
    case SplitScheme::kSpeakerIndependent: return "speaker_independent";
    case SplitScheme::kRandom: return "random";
    case SplitScheme::kFixedManifest: return "fixed_manifest";
  }
  return "random";
}

SplitScheme split_scheme_from_string(const std::string& s) {
  if (s == "speaker_independent") return SplitScheme::kSpeakerIndependent;
  if (s == "random") return SplitScheme::kRandom;
  if (s == "fixed_manifest") return SplitScheme::kFixedManifest;
  throw ConfigError("unknown split scheme '" + s + "'");
}

int SplitPlan::fold_of(const std::string& id) const {
  auto it = assignment.find(id);
  if (it == assignment.end()) throw InputError("utterance '" + id + "' not in split plan");
  return it->second;
}

SplitPlan make_folds(const Corpus& corpus, int k, SplitScheme scheme, std::uint64_t seed) {
  SplitPlan plan;
  plan.scheme = scheme;
  Rng rng = make_stream(seed, "folds");

  switch (scheme) {
    case SplitScheme::kRandom: {
      if (k < 2) throw ConfigError("fold count must be at least 2");
      plan.k = k;
      std::vector<std::size_t> order(corpus.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i = 0; i < order.size(); ++i)
        plan.assignment[corpus.utterances[order[i]].id] = static_cast<int>(i % static_cast<std::size_t>(k));
      break;
    }
    case SplitScheme::kSpeakerIndependent: {
      if (k < 2) throw ConfigError("fold count must be at least 2");
      plan.k = k;
      std::vector<std::string> speakers;
      for (const auto& u : corpus.utterances) speakers.push_back(u.speaker);
      std::sort(speakers.begin(), speakers.end());
      speakers.erase(std::unique(speakers.begin(), speakers.end()), speakers.end());
      if (speakers.size() < static_cast<std::size_t>(k))
        throw ConfigError("speaker-independent folds need at least " + std::to_string(k) +
                          " speakers, corpus has " + std::to_string(speakers.size()));
      std::shuffle(speakers.begin(), speakers.end(), rng);
      std::map<std::string, int> speaker_fold;
      for (std::size_t i = 0; i < speakers.size(); ++i)
        speaker_fold[speakers[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
      for (const auto& u : corpus.utterances) plan.assignment[u.id] = speaker_fold[u.speaker];
      break;
    }
    case SplitScheme::kFixedManifest: {
      std::map<std::string, int> index;
      for (const auto& u : corpus.utterances) {
        if (!u.split) throw ConfigError("fixed_manifest scheme requires a split on '" + u.id + "'");
        auto [it, inserted] = index.emplace(*u.split, static_cast<int>(plan.fold_names.size()));
        if (inserted) plan.fold_names.push_back(*u.split);
        plan.assignment[u.id] = it->second;
      }
      plan.k = static_cast<int>(plan.fold_names.size());
      break;
    }
  }
  return plan;
}

FoldSplit select_fold(const Corpus& corpus, const SplitPlan& plan, int test_fold) {
  if (test_fold < 0 || test_fold >= plan.k) throw ConfigError("fold index out of range");
  FoldSplit out;
  out.train.num_classes = out.test.num_classes = corpus.num_classes;
  for (const auto& u : corpus.utterances) {
    if (plan.fold_of(u.id) == test_fold) {
      Utterance t = u;
      t.split = "test";
      out.test.utterances.push_back(std::move(t));
    } else {
      Utterance t = u;
      if (t.is_test()) t.split = "train";
      out.train.utterances.push_back(std::move(t));
    }
  }
  return out;
}

std::pair<Corpus, Corpus> split_validation(const Corpus& corpus, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must lie in [0, 1)");
  Rng rng = make_stream(seed, "validation");
  std::vector<char> is_val(corpus.size(), 0);
  for (int c = 0; c < corpus.num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < corpus.size(); ++i)
      if (corpus.utterances[i].label == c) members.push_back(i);
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t take = round_half_up(fraction, members.size());
    for (std::size_t i = 0; i < take; ++i) is_val[members[i]] = 1;
  }
  Corpus train, val;
  train.num_classes = val.num_classes = corpus.num_classes;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    (is_val[i] ? val : train).utterances.push_back(corpus.utterances[i]);
  return {std::move(train), std::move(val)};
}

TestMissingPlan apply_test_missing(const Corpus& test, double q, std::uint64_t seed) {
  if (!(q >= 0.0 && q <= 1.0)) throw InputError("test missing ratio q must lie in [0, 1]");
  TestMissingPlan plan;
  plan.q = q;
  plan.seed = seed;
  std::vector<std::size_t> order(test.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_stream(seed, "test_missing");
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t count = round_half_up(q, test.size());
  for (std::size_t i = 0; i < count; ++i) plan.masked_ids.insert(test.utterances[order[i]].id);
  return plan;
}

json to_json(const PartitionedCorpus& partition) {
  json complete = json::array(), text_only = json::array();
  for (const auto& u : partition.complete) complete.push_back(u.id);
  for (const auto& u : partition.text_only) text_only.push_back(u.id);
  return {{"p", partition.p},
          {"seed", partition.seed},
          {"num_classes", partition.num_classes},
          {"complete", complete},
          {"text_only", text_only}};
}

json to_json(const SplitPlan& plan) {
  return {{"k", plan.k},
          {"scheme", to_string(plan.scheme)},
          {"assignment", plan.assignment},
          {"fold_names", plan.fold_names}};
}

SplitPlan split_plan_from_json(const json& j) {
  SplitPlan plan;
  plan.k = j.at("k").get<int>();
  plan.scheme = split_scheme_from_string(j.at("scheme").get<std::string>());
  plan.assignment = j.at("assignment").get<std::map<std::string, int>>();
  plan.fold_names = j.value("fold_names", std::vector<std::string>{});
  return plan;
}

json to_json(const TestMissingPlan& plan) {
  return {{"q", plan.q}, {"seed", plan.seed}, {"masked_ids", plan.masked_ids}};
}

}  // namespace tiasu
