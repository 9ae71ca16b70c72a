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

// Acceptance criteria 1-12. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. TIASU_ACCEPT_ONLY=3,7 restricts the run.
//
// `acceptance --determinism-probe` prints the determinism digest used by
// criterion 2 and exits.

#include "../support/metric_fixtures.h"
#include "../support/oracles.h"

#include "tiasu/augment.h"
#include "tiasu/cli.h"
#include "tiasu/corpus.h"
#include "tiasu/encoders.h"
#include "tiasu/evalrep.h"
#include "tiasu/experiment.h"
#include "tiasu/metrics.h"
#include "tiasu/model.h"
#include "tiasu/npy.h"
#include "tiasu/process.h"
#include "tiasu/synth_bench.h"
#include "tiasu/training.h"
#include "tiasu/tts_pool.h"

#include "httplib.h"
#include "json.hpp"
#include <spdlog/spdlog.h>

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace tiasu;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = TIASU_FIXTURES;

struct Verdict {
  bool pass = true;
  std::string detail;

  // Records a sub-check; the first failures are kept in the detail text.
  void check(bool ok, const std::string& what) {
    if (!ok) {
      if (pass || detail.size() < 400) detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
      pass = false;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

std::string pts(double v) { return fmt("%.1f", 100 * v); }

// --- shared helpers -----------------------------------------------------------

std::shared_ptr<const WorldParams> toy_world(TaskProfile p = TaskProfile::kContentDominant, int experts = 3) {
  WorldOptions wo;
  wo.frames = 12;
  return std::make_shared<const WorldParams>(make_world(p, 5, 4, experts, wo));
}

std::vector<std::shared_ptr<const ExpertAdapter>> adapters(const std::shared_ptr<const WorldParams>& w) {
  std::vector<std::shared_ptr<const ExpertAdapter>> out;
  for (int k = 0; k < w->num_experts(); ++k) out.push_back(std::make_shared<SyntheticExpert>(w, k));
  return out;
}

bool same_speech(const std::optional<SpeechPayload>& a, const std::optional<SpeechPayload>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  if (!a->frames || !b->frames) return !a->frames && !b->frames && a->audio_path == b->audio_path;
  return a->frames->rows() == b->frames->rows() && a->frames->cols() == b->frames->cols() && *a->frames == *b->frames;
}

bool same_rows(const std::vector<TrainingPair>& a, const std::vector<TrainingPair>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].id != b[i].id || a[i].text != b[i].text || a[i].label != b[i].label || !same_speech(a[i].speech, b[i].speech))
      return false;
  return true;
}

bool same_params(const DownstreamParams<float>& a, const DownstreamParams<float>& b) {
  std::vector<const Mat<float>*> x, y;
  a.visit([&](const std::string&, const std::string&, const Mat<float>& t) { x.push_back(&t); });
  b.visit([&](const std::string&, const std::string&, const Mat<float>& t) { y.push_back(&t); });
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i]->rows() != y[i]->rows() || x[i]->cols() != y[i]->cols() || *x[i] != *y[i]) return false;
  return true;
}

struct ToyFeatures {
  std::unique_ptr<FeatureStore> store;
  SpeechPayload zero;
  ModelSpec spec(const WorldParams& w, Modality mode) const {
    ModelSpec s;
    s.mode = mode;
    s.num_classes = w.num_classes;
    s.num_layers = store->speech_encoder().num_layers();
    s.speech_dim = store->speech_encoder().dim();
    s.text_dim = store->text_encoder().dim();
    return s;
  }
};

ToyFeatures toy_features(const WorldParams& w) {
  ToySpeechEncoderOptions so;
  so.input_dim = w.dim;
  ToyTextEncoderOptions to;
  to.vocab = w.vocab;
  return {std::make_unique<FeatureStore>(std::make_shared<ToySpeechEncoder>(so), std::make_shared<ToyTextEncoder>(to)),
          zero_payload(w.frames, w.dim)};
}

ImputeOptions impute_options(const WorldParams& w) {
  ImputeOptions io;
  io.dim = w.dim;
  io.fallback_frames = w.frames;
  return io;
}

// --- criterion 2 probe --------------------------------------------------------

std::string determinism_digest() {
  std::ostringstream out;
  const auto world = toy_world();
  const Corpus corpus = sample_corpus(*world, 400, 13);

  const PartitionedCorpus part = apply_missing(corpus, 0.7, 21);
  out << "apply_missing";
  for (const auto& u : part.text_only) out << ' ' << u.id;
  out << '\n';

  for (SplitScheme s : {SplitScheme::kSpeakerIndependent, SplitScheme::kRandom}) {
    const SplitPlan plan = make_folds(corpus, 5, s, 21);
    out << "make_folds " << to_string(s);
    for (const auto& [id, f] : plan.assignment) out << ' ' << id << ':' << f;
    out << '\n';
  }

  const SplitPlan plan = make_folds(corpus, 5, SplitScheme::kSpeakerIndependent, 21);
  const FoldSplit fold = select_fold(corpus, plan, 0);
  const TestMissingPlan tm = apply_test_missing(fold.test, 0.5, 21);
  out << "apply_test_missing";
  for (const auto& id : tm.masked_ids) out << ' ' << id;
  out << '\n';

  std::vector<Utterance> text_only(part.text_only.begin(), part.text_only.begin() + 20);
  PoolOptions po;
  po.seed = 21;
  const GenerationPool pool = build_pool(text_only, adapters(world), StylePolicy::kNone, po);
  out << "sample_imputation";
  for (const auto& u : text_only) {
    Rng rng = make_stream(21, "imputation", {fnv1a64(u.id)});
    for (int i = 0; i < 25; ++i) out << ' ' << sample_imputation(pool, u.id, rng).expert_index;
  }
  out << '\n';
  out << "pool_payloads";
  for (const auto& [id, cands] : pool.entries)
    for (const auto& c : cands) {
      const FrameMatrix& f = *c.payload.frames;
      out << ' ' << hex64(fnv1a64(std::string_view(reinterpret_cast<const char*>(f.data()), sizeof(float) * f.size())));
    }
  out << '\n';

  std::vector<TrainingPair> batch = pairs_from(corpus.utterances);
  Rng drop = make_stream(21, "dropout", {3, 4});
  dropout_batch(batch, 0.5, drop, zero_payload(world->frames, world->dim));
  out << "dropout_batch ";
  for (const auto& r : batch) out << (r.provenance == Provenance::kZeroFilled ? '1' : '0');
  out << '\n';
  return out.str();
}

// --- criteria -----------------------------------------------------------------

Verdict criterion1() {
  Verdict v;
  auto exact = [](double got, double want) { return std::abs(got - want) <= 4 * std::numeric_limits<double>::epsilon(); };
  int n = 0;
  for (const auto& f : oracle::kMetricFixtures) {
    const double u = static_cast<double>(f.uar_n) / f.uar_d, m = static_cast<double>(f.macro_n) / f.macro_d;
    const double w = static_cast<double>(f.weighted_n) / f.weighted_d, a = static_cast<double>(f.acc_n) / f.acc_d;
    v.check(exact(uar(f.preds, f.labels), u), "uar fixture " + std::to_string(n));
    v.check(exact(f1(f.preds, f.labels, F1Average::kMacro), m), "macro f1 fixture " + std::to_string(n));
    v.check(exact(f1(f.preds, f.labels, F1Average::kWeighted), w), "weighted f1 fixture " + std::to_string(n));
    v.check(exact(f1(f.preds, f.labels, F1Average::kMicro), a), "micro f1 fixture " + std::to_string(n));
    ++n;
  }
  v.check(n >= 20, "at least 20 fixtures");
  // labels [0,0,1,1], preds [0,1,1,1]
  v.check(uar({0, 1, 1, 1}, {0, 0, 1, 1}) == 0.75, "uar labels [0,0,1,1] preds [0,1,1,1] = 0.75");
  Rng rng = make_stream(1, "criterion1");
  int identity = 0;
  for (int c = 0; c < 100; ++c) {
    const std::size_t len = 1 + uniform_below(rng, 80), k = 2 + uniform_below(rng, 6);
    std::vector<int> p(len), l(len);
    for (std::size_t i = 0; i < len; ++i) {
      p[i] = static_cast<int>(uniform_below(rng, k));
      l[i] = static_cast<int>(uniform_below(rng, k));
    }
    const bool ok = std::abs(f1(p, l, F1Average::kMicro) - accuracy(p, l)) <= 1e-9 &&
                    std::abs(uar(p, l) - oracle::uar(p, l)) <= 1e-9 &&
                    std::abs(f1(p, l, F1Average::kMacro) - oracle::f1_macro(p, l)) <= 1e-9;
    identity += ok;
  }
  v.check(identity == 100, "micro-F1 = accuracy on 100 random cases");
  v.note(std::to_string(n) + " fixtures exact to 4 ulp, " + std::to_string(identity) + "/100 random identities within 1e-9");
  return v;
}

Verdict criterion2(const std::string& self) {
  Verdict v;
  const ProcessResult a = run_process({self, "--determinism-probe"}, 120);
  const ProcessResult b = run_process({self, "--determinism-probe"}, 120);
  v.check(a.exit_code == 0 && b.exit_code == 0, "probe processes exit 0");
  v.check(!a.output.empty() && a.output == b.output, "two processes produce identical bytes");
  v.check(a.output == determinism_digest(), "probe output equals in-process output");
  int lines = 0;
  for (char c : a.output) lines += c == '\n';
  v.check(lines == 7, "seven digest lines");
  v.note(std::to_string(a.output.size()) + " digest bytes, digest " + hex64(fnv1a64(a.output)));
  return v;
}

Verdict criterion3() {
  Verdict v;
  const auto world = toy_world();
  const Corpus corpus = sample_corpus(*world, 300, 4);
  const PartitionedCorpus part = apply_missing(corpus, 0.0, 8);
  PoolOptions po;
  po.seed = 8;
  const GenerationPool pool = build_pool(part.text_only, adapters(world), StylePolicy::kNone, po);
  const ImputeOptions io = impute_options(*world);
  const ImputedView mm = impute_dataset(part, &pool, method_traits(Method::kMm).policy, io);
  const ImputedView tiasu = impute_dataset(part, &pool, method_traits(Method::kTiasuMm).policy, io);
  const ImputedView zero = impute_dataset(part, &pool, method_traits(Method::kMmZero).policy, io);
  for (int e = 0; e < 10; ++e) {
    const auto base = epoch_materialize(mm, nullptr, false, e, 8);
    v.check(base.size() == 300, "mm epoch has D^C");
    v.check(same_rows(base, epoch_materialize(tiasu, nullptr, false, e, 8)), "tiasu_mm(p=0) == mm, epoch " + std::to_string(e));
    v.check(same_rows(base, epoch_materialize(zero, nullptr, false, e, 8)), "mm_zero(p=0) == mm, epoch " + std::to_string(e));
  }

  ToyFeatures fx = toy_features(*world);
  Materializer mat = [&](int e) { return epoch_materialize(mm, nullptr, false, e, 8); };
  TrainConfig a = TrainConfig::for_method(Method::kMm);
  a.seed = 8;
  a.max_epochs = 3;
  TrainConfig b = a;
  b.method = Method::kMmDropout;
  b.dropout_rate = 0.0;
  const auto validation = pairs_from(std::vector<Utterance>(corpus.utterances.begin(), corpus.utterances.begin() + 60));
  const TrainResult ra = train(fx.spec(*world, Modality::kMultimodal), mat, validation, a, *fx.store, fx.zero);
  const TrainResult rb = train(fx.spec(*world, Modality::kMultimodal), mat, validation, b, *fx.store, fx.zero);
  v.check(ra.history.train_loss == rb.history.train_loss, "mm_dropout(rate=0) loss history == mm");
  v.check(ra.history.val_metric == rb.history.val_metric, "mm_dropout(rate=0) validation history == mm");
  v.check(same_params(ra.checkpoint.params, rb.checkpoint.params), "mm_dropout(rate=0) parameters == mm");

  std::vector<TrainingPair> batch = mat(0);
  const auto before = batch;
  Rng r = make_stream(8, "dropout", {0, 0});
  dropout_batch(batch, 0.0, r, fx.zero);
  v.check(same_rows(batch, before), "dropout_batch(rate=0) leaves the batch unchanged");
  v.note("10 epochs x 3 methods identical; 3-epoch mm vs mm_dropout(0) bit-identical");
  return v;
}

Verdict criterion4() {
  Verdict v;
  Rng rng = make_stream(4, "criterion4");
  ModelSpec s;
  s.mode = Modality::kMultimodal;
  s.num_classes = 2;
  s.speech_dim = 16;
  s.text_dim = 16;
  s.num_layers = 4;
  DownstreamModel<double> m(s, 4);
  // Move away from the zero-bias initialization so every bias gradient is generic.
  m.params().visit([&](const std::string& name, const std::string& group, Mat<double>& t) {
    if (group == "layer_logits" || name.find("_b") != std::string::npos)
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = 0.5 * (2 * uniform01(rng) - 1);
  });
  std::vector<std::vector<Mat<double>>> stacks(4);
  std::vector<Mat<double>> texts(4);
  ModelBatch<double> b;
  for (int i = 0; i < 4; ++i) {
    for (int l = 0; l <= 4; ++l) {
      Mat<double> h(3 + i, 16);
      for (Eigen::Index k = 0; k < h.size(); ++k) h.data()[k] = 2 * uniform01(rng) - 1;
      stacks[static_cast<std::size_t>(i)].push_back(h);
    }
    texts[static_cast<std::size_t>(i)] = Mat<double>(2 + i, 16);
    for (Eigen::Index k = 0; k < texts[static_cast<std::size_t>(i)].size(); ++k)
      texts[static_cast<std::size_t>(i)].data()[k] = 2 * uniform01(rng) - 1;
    b.speech.push_back(&stacks[static_cast<std::size_t>(i)]);
    b.text.push_back(&texts[static_cast<std::size_t>(i)]);
    b.labels.push_back(i % 2);
  }
  const auto res = oracle::gradient_check(m, b, 10, 44);
  v.check(res.max_rel_error.size() == 4, "four parameter groups");
  for (const auto& [group, err] : res.max_rel_error) {
    v.check(err < 1e-4, group + " relative error " + fmt("%.2e", err));
    v.note(group + " max rel err " + fmt("%.1e", err));
  }
  return v;
}

Verdict criterion5() {
  Verdict v;
  Rng rng = make_stream(5, "criterion5");
  ModelSpec s;
  s.mode = Modality::kSpeech;
  s.num_layers = 2;
  s.speech_dim = 7;
  DownstreamModel<double> m(s, 5);
  std::vector<Mat<double>> stack;
  for (int l = 0; l < 3; ++l) {
    Mat<double> h(9, 7);
    for (Eigen::Index k = 0; k < h.size(); ++k) h.data()[k] = 4 * uniform01(rng) - 2;
    stack.push_back(h);
  }
  m.params().layer_logits.setConstant(-0.4);
  const double d_mean = (m.combine_layers(stack) - (stack[0] + stack[1] + stack[2]) / 3.0).cwiseAbs().maxCoeff();
  v.check(d_mean < 1e-6, "equal logits give the mean");
  m.params().layer_logits << 50, 0, 0;
  const double d_sat = (m.combine_layers(stack) - stack[0]).cwiseAbs().maxCoeff();
  v.check(d_sat < 1e-10, "saturated logit selects layer 0");
  m.params().layer_logits << 0.3, -0.7, 1.1;
  const auto expect = oracle::weighted_layer_sum(stack, {0.3, -0.7, 1.1});
  const Mat<double> got = m.combine_layers(stack);
  double d_rand = 0;
  for (Eigen::Index i = 0; i < got.rows(); ++i)
    for (Eigen::Index j = 0; j < got.cols(); ++j)
      d_rand = std::max(d_rand, std::abs(got(i, j) - expect[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
  v.check(d_rand < 1e-6, "random logits match the oracle");
  const Mat<double> w = m.layer_weights();
  v.check((w.array() >= 0).all() && std::abs(w.sum() - 1) < 1e-12, "weights are a distribution");
  v.note("mean dev " + fmt("%.1e", d_mean) + " (<1e-6), saturated dev " + fmt("%.1e", d_sat) + " (<1e-10), oracle dev " +
         fmt("%.1e", d_rand) + " (<1e-6)");
  return v;
}

Verdict criterion6() {
  Verdict v;
  const auto world = toy_world();
  Corpus c = sample_corpus(*world, 4, 6);
  std::vector<Utterance> one = {c.utterances[0]};
  one[0].speech.reset();
  PoolOptions po;
  po.seed = 6;
  const GenerationPool pool = build_pool(one, adapters(world), StylePolicy::kNone, po);
  v.check(pool.entries.at(one[0].id).size() == 3, "three candidates");
  std::vector<int> counts(3, 0);
  Rng rng = make_stream(6, "criterion6");
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(sample_imputation(pool, one[0].id, rng).expert_index)];
  std::string freq;
  for (int k = 0; k < 3; ++k) {
    const double f = static_cast<double>(counts[static_cast<std::size_t>(k)]) / draws;
    v.check(std::abs(f - 1.0 / 3.0) <= 0.02, "expert " + std::to_string(k) + " frequency " + fmt("%.4f", f));
    freq += (k ? "/" : "") + fmt("%.4f", f);
  }
  v.note("frequencies " + freq + " (1/3 +- 0.02) over 30000 draws");
  return v;
}

// Desk-scale cells for criteria 7-11, memoized by cell key.
class Cells {
 public:
  CellResult get(const CellSpec& c) {
    const std::string key = cell_key(c);
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
    const auto t0 = std::chrono::steady_clock::now();
    CellResult r = run_cell(c);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "  cell %-14s %-16s p=%.2f seed=%llu experts=%zu aug=%d -> %s (%.0fs)\n", to_string(c.world.profile).c_str(),
                 to_string(c.method).c_str(), c.p, static_cast<unsigned long long>(c.seed), c.experts.size(),
                 c.use_llm_aug ? 1 : 0, pts(r.metric_by_q.at(c.qs.front())).c_str(), s);
    return memo_.emplace(key, std::move(r)).first->second;
  }

  /// Mean over seeds of the metric at q.
  double mean(const std::function<CellSpec(std::uint64_t)>& make, double q = 0.0) {
    double s = 0;
    for (std::uint64_t seed : kSeeds) s += get(make(seed)).metric_by_q.at(q);
    return s / static_cast<double>(kSeeds.size());
  }

  static inline const std::vector<std::uint64_t> kSeeds = {1, 2, 3};

 private:
  std::map<std::string, CellResult> memo_;
};

// Desk-scale learning rate: text and multimodal heads use 1e-3 on ~1.3k rows.
CellSpec desk(TaskProfile profile, Method m, double p, std::uint64_t seed, std::vector<double> qs = {0.0}) {
  CellSpec c;
  c.world.profile = profile;
  c.method = m;
  c.p = p;
  c.seed = seed;
  c.qs = std::move(qs);
  if (method_traits(m).mode != Modality::kSpeech) c.lr = 1e-3;
  return c;
}

constexpr TaskProfile kContent = TaskProfile::kContentDominant;
constexpr TaskProfile kProsody = TaskProfile::kProsodyDominant;

Verdict criterion7(Cells& cells) {
  Verdict v;
  const double tiasu_s = cells.mean([](auto s) { return desk(kContent, Method::kTiasuS, 0.95, s); });
  const double speech = cells.mean([](auto s) { return desk(kContent, Method::kSpeech, 0.95, s); });
  const double mm_zero = cells.mean([](auto s) { return desk(kContent, Method::kMmZero, 0.95, s); });
  const double tiasu_mm = cells.mean([](auto s) { return desk(kContent, Method::kTiasuMm, 0.95, s); });
  v.check(tiasu_s - speech >= 0.03, "tiasu_s exceeds speech-only by >= 3 points");
  v.check(mm_zero <= tiasu_mm, "mm_zero <= tiasu_mm");
  v.note("UAR tiasu_s " + pts(tiasu_s) + " vs speech(5%) " + pts(speech) + " (need +3.0); mm_zero " + pts(mm_zero) +
         " <= tiasu_mm " + pts(tiasu_mm));
  return v;
}

Verdict criterion8(Cells& cells) {
  Verdict v;
  const std::vector<double> q4 = {0.0, 0.5, 0.7, 0.9};
  const double p_text = cells.mean([](auto s) { return desk(kProsody, Method::kText, 0.0, s); });
  const double p_speech = cells.mean([](auto s) { return desk(kProsody, Method::kSpeech, 0.0, s); });
  const double p_mm = cells.mean([&](auto s) { return desk(kProsody, Method::kMm, 0.0, s, q4); });
  const double p_gen = cells.mean([](auto s) { return desk(kProsody, Method::kTiasuS, 1.0, s); });
  const double c_text = cells.mean([](auto s) { return desk(kContent, Method::kText, 0.0, s); });
  const double c_speech = cells.mean([](auto s) { return desk(kContent, Method::kSpeech, 0.0, s); });
  const double c_gen = cells.mean([](auto s) { return desk(kContent, Method::kTiasuS, 1.0, s); });
  v.check(p_mm >= p_speech && p_speech >= p_text, "prosody world: mm >= speech >= text");
  v.check(c_text >= c_speech, "content world: text >= speech");
  v.check(std::abs(c_gen - c_speech) <= 0.03, "content world: tiasu_s(p=1) within 3 points of speech");
  v.check(p_speech - p_gen >= 0.05, "prosody world: tiasu_s(p=1) >= 5 points below speech");
  v.note("prosody mm/speech/text " + pts(p_mm) + "/" + pts(p_speech) + "/" + pts(p_text) + ", tiasu_s(p=1) " + pts(p_gen) +
         " (gap " + pts(p_speech - p_gen) + " >= 5.0); content text/speech " + pts(c_text) + "/" + pts(c_speech) +
         ", tiasu_s(p=1) " + pts(c_gen) + " (|gap| " + pts(std::abs(c_gen - c_speech)) + " <= 3.0)");
  return v;
}

Verdict criterion9(Cells& cells) {
  Verdict v;
  const double pool = cells.mean([](auto s) { return desk(kContent, Method::kTiasuS, 0.95, s); });
  double single = 0;
  std::string each;
  for (int k = 0; k < 3; ++k) {
    const double m = cells.mean([k](auto s) {
      CellSpec c = desk(kContent, Method::kTiasuS, 0.95, s);
      c.experts = {k};
      return c;
    });
    single += m / 3;
    each += (k ? "/" : "") + pts(m);
  }
  v.check(pool >= single, "3-expert pool >= mean of single-expert pools");
  v.note("UAR pool " + pts(pool) + " vs single-expert mean " + pts(single) + " (" + each + ")");
  return v;
}

Verdict criterion10(Cells& cells) {
  Verdict v;
  const std::vector<double> q4 = {0.0, 0.5, 0.7, 0.9};
  std::string detail;
  for (double q : {0.5, 0.7, 0.9}) {
    const double mm0 = cells.mean([&](auto s) { return desk(kProsody, Method::kMm, 0.0, s, q4); }, 0.0);
    const double mmq = cells.mean([&](auto s) { return desk(kProsody, Method::kMm, 0.0, s, q4); }, q);
    // Dropout rate equals the test missing ratio, one model per q.
    auto drop = [q](std::uint64_t s) { return desk(kProsody, Method::kTiasuDropout, 0.5, s, {0.0, q}); };
    const double d0 = cells.mean(drop, 0.0);
    const double dq = cells.mean(drop, q);
    v.check(d0 - dq < mm0 - mmq, "q=" + fmt("%.1f", q) + " dropout degradation < mm degradation");
    detail += (detail.empty() ? "" : ", ") + std::string("q=") + fmt("%.1f", q) + " drop " + pts(d0 - dq) + " < " + pts(mm0 - mmq);
  }
  v.note("tiasu_dropout vs mm: " + detail);
  return v;
}

Verdict criterion11(Cells& cells) {
  Verdict v;
  const double plain = cells.mean([](auto s) { return desk(kContent, Method::kTiasuS, 0.95, s); });
  const double aug = cells.mean([](auto s) {
    CellSpec c = desk(kContent, Method::kTiasuS, 0.95, s);
    c.use_llm_aug = true;
    return c;
  });
  v.check(std::abs(aug - plain) < 0.02, "augmented tiasu_s within 2 points");

  const std::string slue = "well it's hard to get the the right the proper finance money to";
  v.check(build_prompt(slue) ==
              "Don't repeat my instructions. \nRephrase the following sentence: \n"
              "well it's hard to get the the right the proper finance money to",
          "SLUE prompt bytes");
  v.check(build_prompt("hello there") == "Don't repeat my instructions. \nRephrase the following sentence: \nhello there",
          "hello there prompt bytes");
  const CannedRephraser canned = CannedRephraser::from_file(kFixtures / "rephrase" / "canned.json");
  Utterance u;
  u.id = "slue";
  u.text = slue;
  const RephraseOutcome o = rephrase(canned, u);
  v.check(o.text && *o.text == "Securing adequate financial resources can be a challenge.", "SLUE canned rephrase");
  u.text = "echo this";
  v.check(!rephrase(canned, u).text, "prompt echo rejected");
  v.note("UAR aug " + pts(aug) + " vs plain " + pts(plain) + " (|diff| " + pts(std::abs(aug - plain)) +
         " < 2.0); prompt bytes and SLUE pair exact");
  return v;
}

Verdict criterion12(const fs::path& scratch) {
  Verdict v;
  // Encoder contracts against recorded registry features.
  const RegistrySpeechEncoder speech(kFixtures / "registry", "speech-base-12l");
  const RegistryTextEncoder text(kFixtures / "registry", "text-base");
  SpeechPayload audio;
  audio.key = "one_second";
  audio.audio_path = (kFixtures / "audio" / "one_second.wav").string();
  const SpeechLayerStack st = speech.encode(audio);
  v.check(st.num_layers() == 12 && st.frames() == speech.config().expected_frames(wav_num_samples(audio.audio_path)),
          "registry speech stack shape");
  const TextHidden th = text.encode("hello there");
  v.check(th.hidden.rows() == 3 && th.hidden.cols() == text.dim(), "registry text hidden shape");

  // The downstream model accepts the full-scale shapes.
  ModelSpec ms;
  ms.mode = Modality::kMultimodal;
  ms.num_layers = speech.num_layers();
  ms.speech_dim = speech.dim();
  ms.text_dim = text.dim();
  const DownstreamModel<float> model(ms, 1);
  std::vector<Mat<float>> layers(st.hidden.begin(), st.hidden.end());
  const Mat<float> th_m = th.hidden;
  ModelBatch<float> batch;
  batch.speech = {&layers};
  batch.text = {&th_m};
  batch.text_mask = {&th.mask};
  batch.labels = {0};
  const Mat<float> logits = model.forward(batch);
  v.check(logits.rows() == 1 && logits.cols() == 4 && logits.allFinite(), "full-scale shaped forward");

  // TTS adapter contracts: external command and HTTP service with recorded outputs.
  const FrameMatrix recorded = read_frames_npy(kFixtures / "tts" / "recorded_frames.npy");
  ::setenv("FAKE_TTS_LOG", (scratch / "tts.log").c_str(), 1);
  CommandExpert cmd("fake", {(kFixtures / "tts" / "fake_tts.sh").string()}, scratch / "cmd");
  const SpeechPayload from_cmd = cmd.generate({"hello there", std::nullopt, 3});
  ::unsetenv("FAKE_TTS_LOG");
  v.check(from_cmd.has_frames() && *from_cmd.frames == recorded, "command adapter returns the recorded frames");

  httplib::Server server;
  const std::string wav = read_file(kFixtures / "tts" / "recorded.wav");
  server.Post("/tts", [&](const httplib::Request&, httplib::Response& res) { res.set_content(wav, "audio/wav"); });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th_server([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  HttpExpert http("remote", "http://127.0.0.1:" + std::to_string(port) + "/tts", scratch / "http");
  SpeechPayload from_http;
  try {
    from_http = http.generate({"hello there", 1, 3});
  } catch (const std::exception& e) {
    v.check(false, std::string("http adapter: ") + e.what());
  }
  server.stop();
  th_server.join();
  v.check(!from_http.audio_path.empty() && wav_num_samples(from_http.audio_path) == 8000, "http adapter stores the recorded wav");

  // Table-2 layout from supplied full-scale results, in-process and through the CLI.
  const std::string golden = read_file(kFixtures / "fullscale" / "table2_golden.md");
  ResultTable t = load_results(kFixtures / "fullscale" / "table2_results.csv");
  t.aggregate();
  const std::string first = render_table2(t), second = render_table2(t);
  v.check(first == golden && second == golden, "table2 render equals the golden bytes");
  std::ostringstream out, err;
  const int code = run_cli({"report", "--results", (kFixtures / "fullscale" / "table2_results.csv").string(), "--out",
                            (scratch / "report").string()},
                           out, err);
  v.check(code == kExitOk && read_file(scratch / "report" / "table2.md") == golden, "report subcommand writes the golden table");
  v.note("registry 13x49x8 stack, command and HTTP adapters replayed, table2.md byte-identical (" +
         std::to_string(golden.size()) + " bytes)");
  return v;
}

std::set<int> selected() {
  std::set<int> out;
  const char* env = std::getenv("TIASU_ACCEPT_ONLY");
  if (!env || !*env) {
    for (int i = 1; i <= 12; ++i) out.insert(i);
    return out;
  }
  std::stringstream ss(env);
  for (std::string tok; std::getline(ss, tok, ',');) out.insert(std::stoi(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::err);
  if (argc > 1 && std::string(argv[1]) == "--determinism-probe") {
    std::fputs(determinism_digest().c_str(), stdout);
    return 0;
  }
  const std::string self = fs::read_symlink("/proc/self/exe").string();
  const fs::path scratch = fs::temp_directory_path() / ("tiasu-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  Cells cells;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"metric oracles", criterion1},
      {"determinism across processes", [&] { return criterion2(self); }},
      {"boundary equivalences", criterion3},
      {"gradient check", criterion4},
      {"layer-combine correctness", criterion5},
      {"multi-expert selection statistics", criterion6},
      {"TI-ASU ordering at p=0.95", [&] { return criterion7(cells); }},
      {"modality-information ordering", [&] { return criterion8(cells); }},
      {"pool-diversity gain", [&] { return criterion9(cells); }},
      {"dropout robustness", [&] { return criterion10(cells); }},
      {"augmentation plumbing", [&] { return criterion11(cells); }},
      {"full-scale harness smoke test", [&] { return criterion12(scratch); }},
  };
  const std::set<int> only = selected();
  int failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %2d (%s): %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                v.detail.c_str(), s);
    std::fflush(stdout);
    failed += !v.pass;
    ++ran;
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  std::error_code ec;
  fs::remove_all(scratch, ec);
  return failed == 0 ? 0 : 1;
}
