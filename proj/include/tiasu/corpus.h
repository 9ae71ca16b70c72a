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

// Corpus loading, training/testing missing-speech masks and cross-validation
// splits. All sampling here is a pure function of (input, seed); masks for
// different ratios are sampled independently, so the text-only set at p=0.9
// is not guaranteed to contain the text-only set at p=0.5.

#ifndef TIASU_CORPUS_H_
#define TIASU_CORPUS_H_

#include "tiasu/common.h"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace tiasu {

enum class Provenance { kReal, kGenerated, kZeroFilled };

std::string to_string(Provenance p);

/// Speech input: either decoded frames or a reference to an audio/array file
/// that an encoder adapter knows how to read. `key` names cached features.
struct SpeechPayload {
  std::shared_ptr<const FrameMatrix> frames;
  std::string audio_path;
  std::string key;

  bool has_frames() const { return frames != nullptr; }
  Eigen::Index num_frames() const { return frames ? frames->rows() : 0; }
};

SpeechPayload make_payload(FrameMatrix frames, std::string key = {});

struct Utterance {
  std::string id;
  std::string text;
  std::optional<SpeechPayload> speech;
  int label = 0;
  std::string speaker;
  Provenance provenance = Provenance::kReal;
  std::optional<std::string> split;

  bool has_speech() const { return speech.has_value(); }
  bool is_test() const { return split && *split == "test"; }
};

struct Corpus {
  std::vector<Utterance> utterances;
  int num_classes = 0;

  std::size_t size() const { return utterances.size(); }
  /// Throws ValidationError on duplicate ids, empty text or out-of-range labels.
  void validate() const;
  const Utterance& at(const std::string& id) const;
};

struct ManifestOptions {
  /// Class count; 0 infers max(label) + 1.
  int num_classes = 0;
  /// Load .npy frame payloads eagerly; other audio paths stay references.
  bool load_frames = true;
};

/// Reads the JSONL manifest {"id","text","audio_path","label","speaker","split"}.
/// Relative audio paths resolve against the manifest directory.
Corpus load_manifest(const std::filesystem::path& path, const ManifestOptions& options = {});

/// Writes a manifest; frame payloads without a path are stored as sidecar
/// .npy files under `payload_dir` (relative to the manifest).
void write_manifest(const Corpus& corpus, const std::filesystem::path& path,
                    const std::string& payload_dir = "frames");

struct PartitionedCorpus {
  std::vector<Utterance> complete;   // speech present
  std::vector<Utterance> text_only;  // speech stripped
  double p = 0.0;
  std::uint64_t seed = 0;
  int num_classes = 0;

  std::size_t size() const { return complete.size() + text_only.size(); }
};

/// Strips speech from round_half_up(p*N) utterances chosen uniformly without
/// replacement. Original order is kept within each side.
PartitionedCorpus apply_missing(const Corpus& corpus, double p, std::uint64_t seed);

enum class SplitScheme { kSpeakerIndependent, kRandom, kFixedManifest };

std::string to_string(SplitScheme s);
SplitScheme split_scheme_from_string(const std::string& s);

struct SplitPlan {
  int k = 0;
  SplitScheme scheme = SplitScheme::kRandom;
  std::map<std::string, int> assignment;
  /// For fixed_manifest plans, the split value behind each fold index.
  std::vector<std::string> fold_names;

  int fold_of(const std::string& id) const;
};

SplitPlan make_folds(const Corpus& corpus, int k, SplitScheme scheme, std::uint64_t seed);

/// Train/test view of one fold. Utterances in the test side are tagged split="test".
struct FoldSplit {
  Corpus train;
  Corpus test;
};
FoldSplit select_fold(const Corpus& corpus, const SplitPlan& plan, int test_fold);

/// Seeded split stratified by label; returns {train, validation}.
std::pair<Corpus, Corpus> split_validation(const Corpus& corpus, double fraction, std::uint64_t seed);

struct TestMissingPlan {
  double q = 0.0;
  std::uint64_t seed = 0;
  std::set<std::string> masked_ids;

  bool masked(const std::string& id) const { return masked_ids.count(id) > 0; }
};

TestMissingPlan apply_test_missing(const Corpus& test, double q, std::uint64_t seed);

nlohmann::json to_json(const PartitionedCorpus& partition);
nlohmann::json to_json(const SplitPlan& plan);
nlohmann::json to_json(const TestMissingPlan& plan);
SplitPlan split_plan_from_json(const nlohmann::json& j);

}  // namespace tiasu

#endif  // TIASU_CORPUS_H_
