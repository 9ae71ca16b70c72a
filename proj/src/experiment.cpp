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

#include "tiasu/experiment.h"

#include "tiasu/npy.h"
#include "tiasu/rng.h"

#include <cmath>
#include <cstdio>

namespace tiasu {

using nlohmann::json;

const char* const kCodeVersion = "tiasu-0.1.0";

namespace {

json options_json(const WorldOptions& o) {
  json j = {{"vocab", o.vocab},
            {"dim", o.dim},
            {"frames", o.frames},
            {"min_len", o.min_len},
            {"max_len", o.max_len},
            {"keywords_per_class", o.keywords_per_class},
            {"expert_bias_std", o.expert_bias_std},
            {"expert_timbre_std", o.expert_timbre_std}};
  if (o.content_weight) j["content_weight"] = *o.content_weight;
  if (o.prosody_gain) j["prosody_gain"] = *o.prosody_gain;
  if (o.noise_sigma) j["noise_sigma"] = *o.noise_sigma;
  return j;
}

WorldOptions options_from_json(const json& j) {
  WorldOptions o;
  o.vocab = j.value("vocab", o.vocab);
  o.dim = j.value("dim", o.dim);
  o.frames = j.value("frames", o.frames);
  o.min_len = j.value("min_len", o.min_len);
  o.max_len = j.value("max_len", o.max_len);
  o.keywords_per_class = j.value("keywords_per_class", o.keywords_per_class);
  o.expert_bias_std = j.value("expert_bias_std", o.expert_bias_std);
  o.expert_timbre_std = j.value("expert_timbre_std", o.expert_timbre_std);
  if (j.contains("content_weight")) o.content_weight = j["content_weight"].get<double>();
  if (j.contains("prosody_gain")) o.prosody_gain = j["prosody_gain"].get<double>();
  if (j.contains("noise_sigma")) o.noise_sigma = j["noise_sigma"].get<double>();
  return o;
}

std::string q_suffix(double q) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", q);
  return buf;
}

}  // namespace

json to_json(const WorldSpec& w) {
  return {{"profile", to_string(w.profile)}, {"world_seed", w.world_seed}, {"num_classes", w.num_classes},
          {"num_experts", w.num_experts},    {"n", w.n},                   {"data_seed", w.data_seed},
          {"options", options_json(w.options)}};
}

WorldSpec world_spec_from_json(const json& j) {
  WorldSpec w;
  w.profile = task_profile_from_string(j.value("profile", std::string("content_dominant")));
  w.world_seed = j.value("world_seed", w.world_seed);
  w.num_classes = j.value("num_classes", w.num_classes);
  w.num_experts = j.value("num_experts", w.num_experts);
  w.n = j.value("n", w.n);
  w.data_seed = j.value("data_seed", w.data_seed);
  if (j.contains("options")) w.options = options_from_json(j["options"]);
  return w;
}

TrainConfig CellSpec::train_config() const {
  TrainConfig t = TrainConfig::for_method(method);
  t.seed = seed;
  t.p = p;
  t.use_llm_aug = use_llm_aug;
  t.metric = metric;
  t.batch_size = batch_size;
  if (epochs) t.max_epochs = *epochs;
  if (lr) t.lr = *lr;
  if (method_traits(method).dropout) {
    if (dropout_rate) {
      t.dropout_rate = *dropout_rate;
    } else {
      // Rate follows the test missing ratio; the largest requested q wins.
      double q = 0;
      for (double v : qs) q = std::max(q, v);
      t.dropout_rate = q;
    }
  }
  return t;
}

json to_json(const CellSpec& c) {
  json j = {{"dataset", c.dataset},
            {"world", to_json(c.world)},
            {"method", to_string(c.method)},
            {"p", c.p},
            {"qs", c.qs},
            {"folds", c.folds},
            {"fold", c.fold},
            {"scheme", to_string(c.scheme)},
            {"seed", c.seed},
            {"experts", c.experts},
            {"style", to_string(c.style)},
            {"use_llm_aug", c.use_llm_aug},
            {"val_fraction", c.val_fraction},
            {"metric", to_string(c.metric)},
            {"batch_size", c.batch_size}};
  if (c.epochs) j["epochs"] = *c.epochs;
  if (c.lr) j["lr"] = *c.lr;
  if (c.dropout_rate) j["dropout_rate"] = *c.dropout_rate;
  return j;
}

CellSpec cell_spec_from_json(const json& j) {
  CellSpec c;
  c.dataset = j.value("dataset", c.dataset);
  if (j.contains("world")) c.world = world_spec_from_json(j["world"]);
  c.method = method_from_string(j.value("method", std::string("mm")));
  c.p = j.value("p", c.p);
  if (j.contains("qs")) c.qs = j["qs"].get<std::vector<double>>();
  c.folds = j.value("folds", c.folds);
  c.fold = j.value("fold", c.fold);
  c.scheme = split_scheme_from_string(j.value("scheme", to_string(c.scheme)));
  c.seed = j.value("seed", c.seed);
  if (j.contains("experts")) c.experts = j["experts"].get<std::vector<int>>();
  c.style = style_policy_from_string(j.value("style", std::string("none")));
  c.use_llm_aug = j.value("use_llm_aug", c.use_llm_aug);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.metric = metric_from_string(j.value("metric", std::string("uar")));
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
  if (j.contains("lr")) {
    const json& lr = j["lr"];
    if (lr.is_object()) {
      const std::string mode = to_string(method_traits(c.method).mode);
      if (lr.contains(mode)) c.lr = lr[mode].get<double>();
    } else {
      c.lr = lr.get<double>();
    }
  }
  if (j.contains("dropout_rate")) c.dropout_rate = j["dropout_rate"].get<double>();
  return c;
}

std::string cell_key(const CellSpec& c) {
  return hex64(fnv1a64(to_json(c).dump() + "\n" + kCodeVersion));
}

json to_json(const CellResult& r) {
  json by_q = json::array();
  for (const auto& [q, v] : r.metric_by_q) {
    json e = {{"q", q}, {"headline", v}, {"metrics", json::object()}};
    auto it = r.metrics_by_q.find(q);
    if (it != r.metrics_by_q.end()) e["metrics"] = it->second;
    by_q.push_back(std::move(e));
  }
  return {{"by_q", by_q},
          {"history", to_json(r.history)},
          {"train_rows", r.train_rows},
          {"pool_candidates", r.pool_candidates}};
}

CellResult cell_result_from_json(const json& j) {
  CellResult r;
  for (const json& e : j.at("by_q")) {
    const double q = e.at("q").get<double>();
    r.metric_by_q[q] = e.at("headline").get<double>();
    if (e.contains("metrics")) r.metrics_by_q[q] = e["metrics"].get<std::map<std::string, double>>();
  }
  if (j.contains("history")) {
    const json& h = j["history"];
    r.history.train_loss = h.value("train_loss", std::vector<double>{});
    if (h.contains("val_metric"))
      for (const json& v : h["val_metric"])
        r.history.val_metric.push_back(v.is_number() ? v.get<double>() : std::nan(""));
    r.history.best_epoch = h.value("best_epoch", -1);
  }
  r.train_rows = j.value("train_rows", std::size_t{0});
  r.pool_candidates = j.value("pool_candidates", std::size_t{0});
  return r;
}

PreparedData prepare_data(const CellSpec& c) {
  PreparedData d;
  const WorldSpec& w = c.world;
  d.world = std::make_shared<const WorldParams>(
      make_world(w.profile, w.world_seed, w.num_classes, w.num_experts, w.options));
  const Corpus corpus = sample_corpus(*d.world, w.n, w.data_seed);
  const SplitPlan plan = make_folds(corpus, c.folds, c.scheme, w.data_seed);
  FoldSplit split = select_fold(corpus, plan, c.fold);
  d.test = std::move(split.test);
  auto [train, val] = split_validation(split.train, c.val_fraction, w.data_seed);
  d.train = std::move(train);
  d.validation = std::move(val);
  return d;
}

CellResult run_cell(const CellSpec& c, const CellOptions& options) {
  const PreparedData data = prepare_data(c);
  const WorldParams& world = *data.world;
  const MethodTraits traits = method_traits(c.method);
  const TrainConfig config = c.train_config();

  const PartitionedCorpus partition = apply_missing(data.train, c.p, c.seed);

  GenerationPool pool;
  AugmentedSet aug;
  if (traits.policy == ImputePolicy::kTts && !partition.text_only.empty()) {
    std::vector<int> ids = c.experts;
    if (ids.empty())
      for (int k = 0; k < world.num_experts(); ++k) ids.push_back(k);
    std::vector<std::shared_ptr<const ExpertAdapter>> adapters;
    for (int k : ids) adapters.push_back(std::make_shared<SyntheticExpert>(data.world, k));
    PoolOptions po;
    po.seed = c.seed;
    pool = build_pool(partition.text_only, adapters, c.style, po);
    if (c.use_llm_aug) {
      ClassResampleRephraser rephraser(data.world, c.seed);
      AugmentOptions ao;
      ao.pool.seed = c.seed;
      aug = build_aug_set(partition.text_only, rephraser, adapters, c.style, ao);
    }
  }
  ImputeOptions io;
  io.dim = world.dim;
  io.fallback_frames = world.frames;
  const ImputedView view = impute_dataset(partition, &pool, traits.policy, io);

  ToySpeechEncoderOptions so;
  so.input_dim = world.dim;
  ToyTextEncoderOptions to;
  to.vocab = world.vocab;
  FeatureStore features(std::make_shared<ToySpeechEncoder>(so), std::make_shared<ToyTextEncoder>(to));
  const Eigen::Index nominal = view.nominal_frames > 0 ? view.nominal_frames : world.frames;
  const SpeechPayload zero = zero_payload(nominal, world.dim);

  ModelSpec spec;
  spec.mode = traits.mode;
  spec.num_classes = world.num_classes;
  spec.num_layers = features.speech_encoder().num_layers();
  spec.speech_dim = features.speech_encoder().dim();
  spec.text_dim = features.text_encoder().dim();

  const std::uint64_t seed = c.seed;
  const bool use_aug = c.use_llm_aug;
  Materializer materialize = [&view, &aug, use_aug, seed](int epoch) {
    return epoch_materialize(view, &aug, use_aug, epoch, seed);
  };
  const std::vector<TrainingPair> validation = pairs_from(data.validation.utterances);
  TrainResult trained = train(spec, materialize, validation, config, features, zero);

  CellResult result;
  result.history = trained.history;
  result.train_rows = view.size();
  result.pool_candidates = pool.num_candidates() + aug.num_candidates();
  const DownstreamModel<float> model(trained.checkpoint.spec, trained.checkpoint.params);
  for (std::size_t i = 0; i < c.qs.size(); ++i) {
    const double q = c.qs[i];
    const TestMissingPlan plan = apply_test_missing(data.test, q, c.seed);
    const std::vector<Prediction> preds = evaluate(model, data.test, plan, features, zero);
    result.metric_by_q[q] = score(preds, c.metric);
    for (Metric m : {Metric::kUar, Metric::kF1Macro, Metric::kF1Micro, Metric::kF1Weighted, Metric::kAccuracy})
      result.metrics_by_q[q][to_string(m)] = score(preds, m);
    if (options.run_dir) {
      if (i == 0) {
        json cfg = {{"cell", to_json(c)}, {"train_config", to_json(config)}, {"code_version", kCodeVersion}};
        write_run_dir(*options.run_dir, cfg, trained, preds);
      } else {
        write_file_atomic(*options.run_dir / ("predictions_q" + q_suffix(q) + ".csv"), predictions_csv(preds));
      }
    }
  }
  return result;
}

CellEvaluation evaluate_cell(const CellSpec& c, const Checkpoint& checkpoint, const std::vector<double>& qs) {
  const PreparedData data = prepare_data(c);
  const WorldParams& world = *data.world;
  const PartitionedCorpus partition = apply_missing(data.train, c.p, c.seed);
  Eigen::Index nominal = median_frames(partition.complete);
  if (nominal <= 0) nominal = world.frames;
  ToySpeechEncoderOptions so;
  so.input_dim = world.dim;
  ToyTextEncoderOptions to;
  to.vocab = world.vocab;
  FeatureStore features(std::make_shared<ToySpeechEncoder>(so), std::make_shared<ToyTextEncoder>(to));
  const SpeechPayload zero = zero_payload(nominal, world.dim);
  const DownstreamModel<float> model(checkpoint.spec, checkpoint.params);
  CellEvaluation out;
  for (double q : qs) {
    const TestMissingPlan plan = apply_test_missing(data.test, q, c.seed);
    std::vector<Prediction> preds = evaluate(model, data.test, plan, features, zero);
    for (Metric m : {Metric::kUar, Metric::kF1Macro, Metric::kF1Micro, Metric::kF1Weighted, Metric::kAccuracy})
      out.metrics_by_q[q][to_string(m)] = score(preds, m);
    out.predictions[q] = std::move(preds);
  }
  return out;
}

}  // namespace tiasu
