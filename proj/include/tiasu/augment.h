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

// Transcript rephrasing through a language model and the augmented
// imputation set built from the rephrased transcripts.

#ifndef TIASU_AUGMENT_H_
#define TIASU_AUGMENT_H_

#include "tiasu/corpus.h"
#include "tiasu/synth_bench.h"
#include "tiasu/tts_pool.h"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace tiasu {

/// Default prompt; TRANSCRIPTIONS is replaced by the transcript. Each
/// instruction line keeps its trailing space before the newline.
inline constexpr const char* kDefaultPromptTemplate =
    "Don't repeat my instructions. \nRephrase the following sentence: \nTRANSCRIPTIONS";
inline constexpr const char* kPromptPlaceholder = "TRANSCRIPTIONS";

std::string build_prompt(const std::string& text, const std::string& prompt_template = kDefaultPromptTemplate);

/// Strips instruction echoes, surrounding quotes and line breaks from a raw
/// response. Returns nullopt when nothing usable remains or the response
/// merely repeats the prompt.
std::optional<std::string> postprocess_response(const std::string& raw, const std::string& prompt,
                                                const std::string& prompt_template = kDefaultPromptTemplate);

struct RephraseRequest {
  std::string id;
  std::string text;
  int label = 0;
  std::string prompt;
};

class RephraseAdapter {
 public:
  virtual ~RephraseAdapter() = default;
  virtual std::string name() const = 0;
  virtual std::string mode() const = 0;
  /// Raw model output for one prompt. Throws AdapterError on failure or refusal.
  virtual std::string complete(const RephraseRequest& request) const = 0;

  std::string model = "unspecified";
  int timeout_seconds = 120;
  int retries = 1;
};

/// Replays recorded responses: a JSON object mapping transcript to response,
/// or an array of {"text", "response"} rows.
class CannedRephraser final : public RephraseAdapter {
 public:
  explicit CannedRephraser(std::map<std::string, std::string> responses);
  static CannedRephraser from_file(const std::filesystem::path& path);
  std::string name() const override { return "canned"; }
  std::string mode() const override { return "canned-fixture"; }
  std::string complete(const RephraseRequest& request) const override;

 private:
  std::map<std::string, std::string> responses_;
};

/// Sends the prompt on stdin and reads the response from stdout.
class CommandRephraser final : public RephraseAdapter {
 public:
  explicit CommandRephraser(std::vector<std::string> command);
  std::string name() const override { return "command"; }
  std::string mode() const override { return "external-command"; }
  std::string complete(const RephraseRequest& request) const override;

 private:
  std::vector<std::string> command_;
};

/// POSTs {"model","prompt","stream":false}; the reply is JSON carrying
/// "response" or "text", or plain text.
class HttpRephraser final : public RephraseAdapter {
 public:
  HttpRephraser(std::string url, std::string auth_token = {});
  std::string name() const override { return "http"; }
  std::string mode() const override { return "remote-service"; }
  std::string complete(const RephraseRequest& request) const override;

 private:
  std::string host_;
  int port_ = 80;
  std::string path_;
  std::string auth_token_;
};

/// Synthetic-world stand-in: a fresh transcript drawn from the utterance's
/// class token distribution.
class ClassResampleRephraser final : public RephraseAdapter {
 public:
  ClassResampleRephraser(std::shared_ptr<const WorldParams> world, std::uint64_t seed);
  std::string name() const override { return "class-resample"; }
  std::string mode() const override { return "canned-fixture"; }
  std::string complete(const RephraseRequest& request) const override;

 private:
  std::shared_ptr<const WorldParams> world_;
  std::uint64_t seed_;
};

struct RephraseOutcome {
  std::optional<std::string> text;
  std::string raw;
  std::string raw_response_path;
  std::string error;
};

struct RephraseOptions {
  std::string prompt_template = kDefaultPromptTemplate;
  /// Raw responses are archived here and replayed on later calls; empty disables.
  std::filesystem::path archive_dir;
};

RephraseOutcome rephrase(const RephraseAdapter& adapter, const Utterance& utterance,
                         const RephraseOptions& options = {});

struct AugEntry {
  std::string text_orig;
  std::string text_aug;
  int label = 0;
  std::string adapter;
  std::string raw_response_path;
  std::vector<SpeechCandidate> candidates;
};

struct AugmentedSet {
  std::map<std::string, AugEntry> entries;
  /// Ids that kept only their original pairs.
  std::set<std::string> skipped;

  bool empty() const { return entries.empty(); }
  std::size_t num_candidates() const;
};

struct AugmentOptions {
  RephraseOptions rephrase;
  PoolOptions pool;
};

/// One rephrase plus one candidate per expert for every text-only utterance.
AugmentedSet build_aug_set(const std::vector<Utterance>& text_only, const RephraseAdapter& adapter,
                           const std::vector<std::shared_ptr<const ExpertAdapter>>& experts, StylePolicy style_policy,
                           const AugmentOptions& options = {});

/// JSONL {"id","text_orig","text_aug","adapter","raw_response_path"}.
void write_aug_manifest(const AugmentedSet& set, const std::filesystem::path& path);
/// The augmented candidates as a generation pool (for the pool manifest writer).
GenerationPool aug_pool(const AugmentedSet& set);

}  // namespace tiasu

#endif  // TIASU_AUGMENT_H_
