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

#include "tiasu/training.h"

#include "tiasu/npy.h"
#include "tiasu/rng.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tiasu {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Method m) {
  switch (m) {
    case Method::kText: return "text";
    case Method::kSpeech: return "speech";
    case Method::kMm: return "mm";
    case Method::kMmZero: return "mm_zero";
    case Method::kTiasuS: return "tiasu_s";
    case Method::kTiasuMm: return "tiasu_mm";
    case Method::kMmDropout: return "mm_dropout";
    case Method::kTiasuDropout: return "tiasu_dropout";
  }
  return "mm";
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = {Method::kText,    Method::kSpeech,   Method::kMm,
                                              Method::kMmZero,  Method::kTiasuS,   Method::kTiasuMm,
                                              Method::kMmDropout, Method::kTiasuDropout};
  return methods;
}

Method method_from_string(const std::string& s) {
  for (Method m : all_methods())
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + s + "'");
}

MethodTraits method_traits(Method m) {
  switch (m) {
    case Method::kText: return {Modality::kText, ImputePolicy::kZero, false};
    case Method::kSpeech: return {Modality::kSpeech, ImputePolicy::kDrop, false};
    case Method::kMm: return {Modality::kMultimodal, ImputePolicy::kDrop, false};
    case Method::kMmZero: return {Modality::kMultimodal, ImputePolicy::kZero, false};
    case Method::kTiasuS: return {Modality::kSpeech, ImputePolicy::kTts, false};
    case Method::kTiasuMm: return {Modality::kMultimodal, ImputePolicy::kTts, false};
    case Method::kMmDropout: return {Modality::kMultimodal, ImputePolicy::kDrop, true};
    case Method::kTiasuDropout: return {Modality::kMultimodal, ImputePolicy::kTts, true};
  }
  return {Modality::kMultimodal, ImputePolicy::kDrop, false};
}

TrainConfig TrainConfig::for_method(Method m) {
  TrainConfig c;
  c.method = m;
  if (method_traits(m).mode == Modality::kSpeech) {
    c.lr = 5e-4;
    c.max_epochs = 30;
  } else {
    c.lr = 1e-4;
    c.max_epochs = 20;
  }
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (dropout_rate < 0 || dropout_rate > 1) throw ConfigError("dropout_rate must lie in [0, 1]");
  if (p < 0 || p > 1) throw ConfigError("p must lie in [0, 1]");
}

json to_json(const TrainConfig& c) {
  return {{"method", to_string(c.method)}, {"batch_size", c.batch_size}, {"lr", c.lr},
          {"max_epochs", c.max_epochs},    {"dropout_rate", c.dropout_rate}, {"seed", c.seed},
          {"p", c.p},                      {"use_llm_aug", c.use_llm_aug}, {"metric", to_string(c.metric)}};
}

TrainConfig train_config_from_json(const json& j) {
  const Method m = method_from_string(j.at("method").get<std::string>());
  TrainConfig c = TrainConfig::for_method(m);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.seed = j.value("seed", c.seed);
  c.p = j.value("p", c.p);
  c.use_llm_aug = j.value("use_llm_aug", c.use_llm_aug);
  if (j.contains("metric")) c.metric = metric_from_string(j["metric"].get<std::string>());
  c.validate();
  return c;
}

json to_json(const TrainHistory& h) {
  json val = json::array();
  for (double v : h.val_metric) val.push_back(std::isfinite(v) ? json(v) : json(nullptr));
  return {{"train_loss", h.train_loss}, {"val_metric", val}, {"best_epoch", h.best_epoch}};
}

std::vector<TrainingPair> pairs_from(const std::vector<Utterance>& utterances) {
  std::vector<TrainingPair> out;
  out.reserve(utterances.size());
  for (const auto& u : utterances) out.push_back({u.id, u.text, u.speech, u.label, u.provenance});
  return out;
}

FeatureStore::FeatureStore(std::shared_ptr<const SpeechEncoder> speech, std::shared_ptr<const TextEncoder> text)
    : speech_(std::move(speech)), text_(std::move(text)) {
  if (!speech_ || !text_) throw ConfigError("feature store needs both encoders");
}

std::shared_ptr<const SpeechLayerStack> FeatureStore::speech(const SpeechPayload& payload) {
  if (payload.key.empty()) return std::make_shared<const SpeechLayerStack>(speech_->encode(payload));
  return speech_cache_.get_or_compute(payload.key, [&] { return speech_->encode(payload); });
}

std::shared_ptr<const TextHidden> FeatureStore::text(const std::string& transcript) {
  return text_cache_.get_or_compute(transcript, [&] { return text_->encode(transcript); });
}

std::vector<TrainingPair> epoch_materialize(const ImputedView& view, const AugmentedSet* aug, bool use_llm_aug,
                                            int epoch, std::uint64_t seed) {
  std::vector<TrainingPair> out = pairs_from(view.complete);
  out.reserve(view.size());
  const bool with_aug = use_llm_aug && aug && !aug->empty();
  for (const auto& u : view.text_only) {
    if (view.policy != ImputePolicy::kTts || u.has_speech()) {
      out.push_back({u.id, u.text, u.speech, u.label, u.provenance});
      continue;
    }
    if (view.gaps.count(u.id) || !view.pool || !view.pool->covers(u.id)) {
      const Utterance z = zero_fill(u, view.nominal_frames, view.dim);
      out.push_back({z.id, z.text, z.speech, z.label, z.provenance});
      continue;
    }
    Rng rng = make_stream(seed, "imputation", {static_cast<std::uint64_t>(epoch), fnv1a64(u.id)});
    const AugEntry* entry = nullptr;
    if (with_aug) {
      auto it = aug->entries.find(u.id);
      if (it != aug->entries.end() && !it->second.candidates.empty()) entry = &it->second;
    }
    if (!entry) {
      const SpeechCandidate& c = sample_imputation(*view.pool, u.id, rng);
      out.push_back({u.id, u.text, c.payload, u.label, Provenance::kGenerated});
      continue;
    }
    const auto& orig = view.pool->entries.at(u.id);
    const std::size_t j = uniform_below(rng, orig.size() + entry->candidates.size());
    if (j < orig.size())
      out.push_back({u.id, u.text, orig[j].payload, u.label, Provenance::kGenerated});
    else
      out.push_back({u.id, entry->text_aug, entry->candidates[j - orig.size()].payload, u.label, Provenance::kGenerated});
  }
  return out;
}

void dropout_batch(std::vector<TrainingPair>& batch, double rate, Rng& rng, const SpeechPayload& zero) {
  if (rate < 0 || rate > 1) throw InputError("dropout rate must lie in [0, 1]");
  for (auto& row : batch) {
    if (uniform01(rng) < rate) {
      row.speech = zero;
      row.provenance = Provenance::kZeroFilled;
    }
  }
}

namespace {

struct GatheredBatch {
  std::vector<std::shared_ptr<const SpeechLayerStack>> stacks;
  std::vector<std::shared_ptr<const TextHidden>> texts;
  ModelBatch<float> batch;
};

GatheredBatch gather(const std::vector<const TrainingPair*>& rows, Modality mode, FeatureStore& features,
                     const SpeechPayload& zero) {
  GatheredBatch g;
  for (const TrainingPair* r : rows) {
    if (uses_speech(mode)) {
      g.stacks.push_back(features.speech(r->speech ? *r->speech : zero));
      g.batch.speech.push_back(&g.stacks.back()->hidden);
    }
    if (uses_text(mode)) {
      g.texts.push_back(features.text(r->text));
      g.batch.text.push_back(&g.texts.back()->hidden);
      g.batch.text_mask.push_back(&g.texts.back()->mask);
    }
    g.batch.labels.push_back(r->label);
  }
  return g;
}

class Adam {
 public:
  Adam(const DownstreamParams<float>& like, double lr) : lr_(lr), m_(like.zeros_like()), v_(like.zeros_like()) {}

  void step(DownstreamParams<float>& params, DownstreamParams<float>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    const float step = static_cast<float>(lr_ * std::sqrt(c2) / c1);
    const float eps = static_cast<float>(kEps * std::sqrt(c2));
    std::vector<Mat<float>*> p, g, m, v;
    params.visit([&](const std::string&, const std::string&, Mat<float>& x) { p.push_back(&x); });
    grad.visit([&](const std::string&, const std::string&, Mat<float>& x) { g.push_back(&x); });
    m_.visit([&](const std::string&, const std::string&, Mat<float>& x) { m.push_back(&x); });
    v_.visit([&](const std::string&, const std::string&, Mat<float>& x) { v.push_back(&x); });
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i]->array() = kBeta1 * m[i]->array() + (1 - kBeta1) * g[i]->array();
      v[i]->array() = kBeta2 * v[i]->array() + (1 - kBeta2) * g[i]->array().square();
      p[i]->array() -= step * m[i]->array() / (v[i]->array().sqrt() + eps);
    }
  }

 private:
  static constexpr float kBeta1 = 0.9f;
  static constexpr float kBeta2 = 0.999f;
  static constexpr double kEps = 1e-8;
  double lr_;
  int t_ = 0;
  DownstreamParams<float> m_, v_;
};

}  // namespace

std::vector<int> predict(const DownstreamModel<float>& model, const std::vector<TrainingPair>& rows,
                         FeatureStore& features, const SpeechPayload& zero) {
  std::vector<int> out;
  out.reserve(rows.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < rows.size(); start += kChunk) {
    std::vector<const TrainingPair*> chunk;
    for (std::size_t i = start; i < std::min(rows.size(), start + kChunk); ++i) chunk.push_back(&rows[i]);
    const GatheredBatch g = gather(chunk, model.spec().mode, features, zero);
    const Mat<float> logits = model.forward(g.batch);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index arg;
      logits.row(i).maxCoeff(&arg);
      out.push_back(static_cast<int>(arg));
    }
  }
  return out;
}

TrainResult train(const ModelSpec& spec, const Materializer& materialize, const std::vector<TrainingPair>& validation,
                  const TrainConfig& config, FeatureStore& features, const SpeechPayload& zero) {
  config.validate();
  ModelSpec s = spec;
  s.mode = method_traits(config.method).mode;
  s.validate();
  DownstreamModel<float> model(s, config.seed);
  Adam adam(model.params(), config.lr);
  const bool dropout = method_traits(config.method).dropout && config.dropout_rate > 0;

  TrainResult result;
  result.checkpoint.spec = s;
  double best = -1;
  std::vector<int> val_labels;
  for (const auto& v : validation) val_labels.push_back(v.label);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const std::vector<TrainingPair> rows = materialize(epoch);
    if (rows.empty()) throw InputError("training set is empty");
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng = make_stream(config.seed, "order", {static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), order_rng);

    double loss_sum = 0;
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t start = 0, b = 0; start < rows.size(); start += bs, ++b) {
      std::vector<TrainingPair> batch;
      for (std::size_t i = start; i < std::min(rows.size(), start + bs); ++i) batch.push_back(rows[order[i]]);
      if (dropout) {
        Rng drop_rng = make_stream(config.seed, "dropout", {static_cast<std::uint64_t>(epoch), b});
        dropout_batch(batch, config.dropout_rate, drop_rng, zero);
      }
      std::vector<const TrainingPair*> ptrs;
      for (const auto& r : batch) ptrs.push_back(&r);
      const GatheredBatch g = gather(ptrs, s.mode, features, zero);
      DownstreamParams<float> grad = model.params().zeros_like();
      const float loss = model.loss_and_gradient(g.batch, grad);
      if (!std::isfinite(loss))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                              " (lr " + std::to_string(config.lr) + ")");
      adam.step(model.params(), grad);
      loss_sum += static_cast<double>(loss) * static_cast<double>(batch.size());
    }
    result.history.train_loss.push_back(loss_sum / static_cast<double>(rows.size()));

    double metric = std::nan("");
    if (!validation.empty()) metric = compute_metric(config.metric, predict(model, validation, features, zero), val_labels);
    result.history.val_metric.push_back(metric);
    const bool better = validation.empty() ? true : metric > best;
    if (better) {
      best = validation.empty() ? best : metric;
      result.history.best_epoch = epoch;
      result.checkpoint.params = model.params();
    }
    spdlog::debug("{} epoch {} loss {:.4f} val {:.4f}", to_string(config.method), epoch,
                  result.history.train_loss.back(), metric);
  }
  result.checkpoint.meta = {{"train_config", to_json(config)}, {"best_epoch", result.history.best_epoch}};
  return result;
}

std::vector<Prediction> evaluate(const DownstreamModel<float>& model, const Corpus& test, const TestMissingPlan& plan,
                                 FeatureStore& features, const SpeechPayload& zero) {
  std::vector<TrainingPair> rows;
  std::vector<Prediction> out;
  std::size_t zeroed = 0;
  for (const auto& u : test.utterances) {
    const bool masked = plan.masked(u.id);
    TrainingPair r{u.id, u.text, std::nullopt, u.label, Provenance::kReal};
    if (!masked && u.has_speech()) {
      if (u.provenance == Provenance::kGenerated) throw InputError("generated speech in test utterance " + u.id);
      r.speech = u.speech;
    } else {
      r.speech = zero;
      r.provenance = Provenance::kZeroFilled;
      ++zeroed;
    }
    rows.push_back(std::move(r));
    out.push_back({u.id, u.label, 0, masked});
  }
  if (model.spec().mode == Modality::kSpeech && zeroed == rows.size() && !rows.empty())
    spdlog::warn("speech-mode evaluation with every test utterance zero-filled (degenerate)");
  const std::vector<int> preds = predict(model, rows, features, zero);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].pred = preds[i];
  return out;
}

double score(const std::vector<Prediction>& predictions, Metric metric) {
  std::vector<int> p, l;
  for (const auto& x : predictions) {
    p.push_back(x.pred);
    l.push_back(x.label);
  }
  return compute_metric(metric, p, l);
}

std::string predictions_csv(const std::vector<Prediction>& predictions) {
  std::string out = "id,label,pred,q_masked\n";
  for (const auto& p : predictions)
    out += p.id + "," + std::to_string(p.label) + "," + std::to_string(p.pred) + "," + (p.q_masked ? "true" : "false") +
           "\n";
  return out;
}

void write_run_dir(const fs::path& dir, const json& config, const TrainResult& result,
                   const std::vector<Prediction>& predictions) {
  fs::create_directories(dir);
  write_file_atomic(dir / "config.json", config.dump(2) + "\n");
  write_file_atomic(dir / "history.json", to_json(result.history).dump(2) + "\n");
  save_checkpoint(dir / "checkpoint.bin", result.checkpoint);
  write_file_atomic(dir / "predictions.csv", predictions_csv(predictions));
}

}  // namespace tiasu
