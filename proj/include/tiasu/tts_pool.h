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

// Imputation pool: K generated speech candidates per text-only utterance, one
// per TTS expert, plus zero-filling and assembly of the imputed dataset.

#ifndef TIASU_TTS_POOL_H_
#define TIASU_TTS_POOL_H_

#include "tiasu/common.h"
#include "tiasu/corpus.h"
#include "tiasu/rng.h"
#include "tiasu/synth_bench.h"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace tiasu {

enum class StylePolicy { kNone, kLabelStyle };
std::string to_string(StylePolicy s);
StylePolicy style_policy_from_string(const std::string& s);

enum class AdapterMode { kSynthetic, kCommand, kHttp };
std::string to_string(AdapterMode m);

struct GenerationRequest {
  std::string text;
  std::optional<int> style;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const GenerationRequest& r);

class ExpertAdapter {
 public:
  virtual ~ExpertAdapter() = default;
  virtual std::string name() const = 0;
  virtual AdapterMode mode() const = 0;
  /// One attempt. Throws AdapterError on failure.
  virtual SpeechPayload generate(const GenerationRequest& request) const = 0;

  int timeout_seconds = 120;
  int retries = 2;  // extra attempts after the first
};

/// In-process expert backed by the synthetic world.
class SyntheticExpert final : public ExpertAdapter {
 public:
  SyntheticExpert(std::shared_ptr<const WorldParams> world, int expert_id);
  std::string name() const override { return "synthetic" + std::to_string(expert_id_); }
  AdapterMode mode() const override { return AdapterMode::kSynthetic; }
  SpeechPayload generate(const GenerationRequest& request) const override;
  int expert_id() const { return expert_id_; }

 private:
  std::shared_ptr<const WorldParams> world_;
  int expert_id_;
};

/// Runs `<command...> <output_path>` with the request JSON on stdin. The
/// command writes a frame array (.npy) or a WAV file to output_path.
class CommandExpert final : public ExpertAdapter {
 public:
  CommandExpert(std::string name, std::vector<std::string> command, std::filesystem::path work_dir);
  std::string name() const override { return name_; }
  AdapterMode mode() const override { return AdapterMode::kCommand; }
  SpeechPayload generate(const GenerationRequest& request) const override;

 private:
  std::string name_;
  std::vector<std::string> command_;
  std::filesystem::path work_dir_;
};

/// POSTs the request JSON to `url` (http://host:port/path); the response body
/// is the frame array or WAV bytes.
class HttpExpert final : public ExpertAdapter {
 public:
  HttpExpert(std::string name, std::string url, std::filesystem::path work_dir, std::string auth_token = {});
  std::string name() const override { return name_; }
  AdapterMode mode() const override { return AdapterMode::kHttp; }
  SpeechPayload generate(const GenerationRequest& request) const override;

 private:
  std::string name_;
  std::string host_;
  int port_ = 80;
  std::string path_;
  std::filesystem::path work_dir_;
  std::string auth_token_;
};

/// Stores a frame array or audio file under `dir`; a non-frame payload keeps
/// its audio_path so the encoder adapter can read it.
SpeechPayload payload_from_bytes(const std::string& bytes, const std::filesystem::path& dir, const std::string& stem);

/// On-disk replay cache keyed by (adapter, text hash, style, seed).
class CandidateCache {
 public:
  explicit CandidateCache(std::filesystem::path dir);
  static std::string key(const std::string& adapter, const GenerationRequest& request);
  std::optional<SpeechPayload> get(const std::string& adapter, const GenerationRequest& request) const;
  SpeechPayload put(const std::string& adapter, const GenerationRequest& request, const SpeechPayload& payload) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

/// Cache lookup, then up to 1 + retries attempts. Throws AdapterError when all fail.
SpeechPayload generate_with_retries(const ExpertAdapter& adapter, const GenerationRequest& request,
                                    const CandidateCache* cache = nullptr);

struct SpeechCandidate {
  SpeechPayload payload;
  std::string expert;
  int expert_index = 0;
  std::optional<int> style;
  std::uint64_t seed = 0;
};

struct GenerationPool {
  std::map<std::string, std::vector<SpeechCandidate>> entries;
  std::vector<std::string> experts;
  StylePolicy style_policy = StylePolicy::kNone;
  /// Ids for which every adapter failed; they fall back to zero-fill.
  std::set<std::string> unimputable;
  /// Recorded (id, expert) generation failures.
  std::vector<std::pair<std::string, std::string>> gaps;

  std::size_t num_candidates() const;
  bool covers(const std::string& id) const;
};

struct PoolOptions {
  std::uint64_t seed = 0;
  const CandidateCache* cache = nullptr;
  int threads = 1;
  /// Salted into generation seeds so augmented candidates differ from the originals.
  std::string salt = "pool";
};

/// Per-candidate generation seed for (pool seed, utterance, expert position).
std::uint64_t generation_seed(std::uint64_t seed, const std::string& salt, const std::string& id, int expert_index);

/// Rejects test utterances with InputError.
GenerationPool build_pool(const std::vector<Utterance>& text_only,
                          const std::vector<std::shared_ptr<const ExpertAdapter>>& adapters, StylePolicy style_policy,
                          const PoolOptions& options = {});

/// Uniform choice over the utterance's candidates.
const SpeechCandidate& sample_imputation(const GenerationPool& pool, const std::string& id, Rng& rng);

/// Pool manifest JSONL {"id","expert","style","payload_path","seed"}; frame
/// payloads are written as .npy files under `payload_dir` (relative to the manifest).
void write_pool_manifest(const GenerationPool& pool, const std::filesystem::path& path,
                         const std::string& payload_dir = "pool");
GenerationPool read_pool_manifest(const std::filesystem::path& path);

SpeechPayload zero_payload(Eigen::Index frames, Eigen::Index dim);
/// Copy of `u` with an all-zero frames x dim payload; requires u without speech.
Utterance zero_fill(const Utterance& u, Eigen::Index nominal_frames, Eigen::Index dim);
/// Median frame count (lower median for even sizes) over utterances with frame payloads.
Eigen::Index median_frames(const std::vector<Utterance>& utterances);

enum class ImputePolicy { kTts, kZero, kDrop };
std::string to_string(ImputePolicy p);

/// D^C plus the text-only side prepared according to the policy. Under kTts
/// the text-only utterances stay speechless and are resolved per epoch.
struct ImputedView {
  ImputePolicy policy = ImputePolicy::kDrop;
  std::vector<Utterance> complete;
  std::vector<Utterance> text_only;
  const GenerationPool* pool = nullptr;
  Eigen::Index nominal_frames = 0;
  Eigen::Index dim = 0;
  /// Text-only ids without candidates under kTts; zero-filled at materialization.
  std::set<std::string> gaps;
  int num_classes = 0;

  std::size_t size() const { return complete.size() + text_only.size(); }
};

struct ImputeOptions {
  /// Frame dimension of zero payloads; 0 infers it from D^C.
  Eigen::Index dim = 0;
  /// Zero-fill length used when D^C has no frame payloads (p = 1).
  Eigen::Index fallback_frames = 0;
};

ImputedView impute_dataset(const PartitionedCorpus& partition, const GenerationPool* pool, ImputePolicy policy,
                           const ImputeOptions& options = {});

}  // namespace tiasu

#endif  // TIASU_TTS_POOL_H_
