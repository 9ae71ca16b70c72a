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

// Training methods over the (imputed) training set and test-time evaluation.
//
//   method         model  training rows
//   text           text   every training utterance (speech unused)
//   speech         speech D^C
//   mm             mm     D^C
//   mm_zero        mm     D^C + zero-filled D^T
//   tiasu_s        speech D^C + D^T with a generated candidate per epoch
//   tiasu_mm       mm     same as tiasu_s
//   mm_dropout     mm     D^C, speech zeroed per batch with probability rate
//   tiasu_dropout  mm     tiasu_mm rows, speech zeroed per batch

#ifndef TIASU_TRAINING_H_
#define TIASU_TRAINING_H_

#include "tiasu/augment.h"
#include "tiasu/corpus.h"
#include "tiasu/encoders.h"
#include "tiasu/metrics.h"
#include "tiasu/model.h"
#include "tiasu/tts_pool.h"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace tiasu {

enum class Method { kText, kSpeech, kMm, kMmZero, kTiasuS, kTiasuMm, kMmDropout, kTiasuDropout };
std::string to_string(Method m);
Method method_from_string(const std::string& s);
const std::vector<Method>& all_methods();

struct MethodTraits {
  Modality mode;
  ImputePolicy policy;
  bool dropout;
};
MethodTraits method_traits(Method m);

struct TrainConfig {
  Method method = Method::kMm;
  int batch_size = 64;
  double lr = 1e-4;
  int max_epochs = 20;
  double dropout_rate = 0.0;
  std::uint64_t seed = 0;
  double p = 0.0;
  bool use_llm_aug = false;
  Metric metric = Metric::kUar;

  /// lr 5e-4 / 30 epochs for speech-mode methods, 1e-4 / 20 otherwise.
  static TrainConfig for_method(Method m);
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_metric;
  int best_epoch = -1;
};

nlohmann::json to_json(const TrainHistory& h);

/// One (text, speech, label) row fed to the model.
struct TrainingPair {
  std::string id;
  std::string text;
  std::optional<SpeechPayload> speech;
  int label = 0;
  Provenance provenance = Provenance::kReal;
};

std::vector<TrainingPair> pairs_from(const std::vector<Utterance>& utterances);

/// Encoder outputs memoized by payload key and transcript.
class FeatureStore {
 public:
  FeatureStore(std::shared_ptr<const SpeechEncoder> speech, std::shared_ptr<const TextEncoder> text);
  std::shared_ptr<const SpeechLayerStack> speech(const SpeechPayload& payload);
  std::shared_ptr<const TextHidden> text(const std::string& transcript);
  const SpeechEncoder& speech_encoder() const { return *speech_; }
  const TextEncoder& text_encoder() const { return *text_; }

 private:
  std::shared_ptr<const SpeechEncoder> speech_;
  std::shared_ptr<const TextEncoder> text_;
  KeyedCache<SpeechLayerStack> speech_cache_;
  KeyedCache<TextHidden> text_cache_;
};

/// Training rows for one epoch. TTS-imputed utterances draw a candidate from
/// the stream (seed, "imputation", epoch, id); with `use_llm_aug` the draw is
/// uniform over original and augmented (text, speech) pairs of the utterance.
std::vector<TrainingPair> epoch_materialize(const ImputedView& view, const AugmentedSet* aug, bool use_llm_aug,
                                            int epoch, std::uint64_t seed);

/// Replaces each sample's speech by `zero` with probability `rate`. Text is kept.
void dropout_batch(std::vector<TrainingPair>& batch, double rate, Rng& rng, const SpeechPayload& zero);

using Materializer = std::function<std::vector<TrainingPair>(int epoch)>;

struct TrainResult {
  Checkpoint checkpoint;
  TrainHistory history;
};

/// Adam on mean cross-entropy, per-epoch validation, best-epoch checkpoint.
/// Throws DivergenceError on a non-finite loss.
TrainResult train(const ModelSpec& spec, const Materializer& materialize, const std::vector<TrainingPair>& validation,
                  const TrainConfig& config, FeatureStore& features, const SpeechPayload& zero);

/// Argmax predictions; rows without speech use `zero` when the model needs speech.
std::vector<int> predict(const DownstreamModel<float>& model, const std::vector<TrainingPair>& rows,
                         FeatureStore& features, const SpeechPayload& zero);

struct Prediction {
  std::string id;
  int label = 0;
  int pred = 0;
  bool q_masked = false;
};

/// Masked test utterances are scored with zero-filled speech, the rest with
/// their real speech. Never uses generated speech.
std::vector<Prediction> evaluate(const DownstreamModel<float>& model, const Corpus& test, const TestMissingPlan& plan,
                                 FeatureStore& features, const SpeechPayload& zero);

double score(const std::vector<Prediction>& predictions, Metric metric);

std::string predictions_csv(const std::vector<Prediction>& predictions);

/// Writes config.json, history.json, checkpoint.bin and predictions.csv.
void write_run_dir(const std::filesystem::path& dir, const nlohmann::json& config, const TrainResult& result,
                   const std::vector<Prediction>& predictions);

}  // namespace tiasu

#endif  // TIASU_TRAINING_H_
