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

// One grid cell on a synthetic world: sample the corpus, pick the fold, mask
// training speech at ratio p, build the pool when the method imputes, train,
// then score the test fold at each requested test missing ratio q.

#ifndef TIASU_EXPERIMENT_H_
#define TIASU_EXPERIMENT_H_

#include "tiasu/synth_bench.h"
#include "tiasu/training.h"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tiasu {

struct WorldSpec {
  TaskProfile profile = TaskProfile::kContentDominant;
  std::uint64_t world_seed = 1;
  int num_classes = 4;
  int num_experts = 3;
  int n = 2000;
  std::uint64_t data_seed = 1;
  WorldOptions options;
};

nlohmann::json to_json(const WorldSpec& w);
WorldSpec world_spec_from_json(const nlohmann::json& j);

struct CellSpec {
  std::string dataset = "synthetic";
  WorldSpec world;
  Method method = Method::kMm;
  double p = 0.0;
  std::vector<double> qs = {0.0};
  int folds = 5;
  int fold = 0;
  SplitScheme scheme = SplitScheme::kSpeakerIndependent;
  std::uint64_t seed = 1;
  /// Expert ids used for the pool; empty means all of the world's experts.
  std::vector<int> experts;
  StylePolicy style = StylePolicy::kNone;
  bool use_llm_aug = false;
  double val_fraction = 0.2;
  Metric metric = Metric::kUar;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<double> dropout_rate;
  int batch_size = 64;

  TrainConfig train_config() const;
};

nlohmann::json to_json(const CellSpec& c);
/// "lr" may be a number or an object keyed by model mode ("speech", "text", "mm").
CellSpec cell_spec_from_json(const nlohmann::json& j);
/// Stable identity of a cell: hash of its JSON plus the code-version fingerprint.
std::string cell_key(const CellSpec& c);
extern const char* const kCodeVersion;

struct CellResult {
  /// Headline metric per test missing ratio.
  std::map<double, double> metric_by_q;
  /// Every metric (uar, f1_macro, f1_micro, f1_weighted, accuracy) per ratio.
  std::map<double, std::map<std::string, double>> metrics_by_q;
  TrainHistory history;
  std::size_t train_rows = 0;
  std::size_t pool_candidates = 0;
};

nlohmann::json to_json(const CellResult& r);
CellResult cell_result_from_json(const nlohmann::json& j);

struct CellOptions {
  /// When set, the run directory (config, history, checkpoint, predictions) is written here.
  std::optional<std::filesystem::path> run_dir;
};

/// Everything derived from the world and data seeds alone.
struct PreparedData {
  std::shared_ptr<const WorldParams> world;
  Corpus train;       // after removing validation
  Corpus validation;
  Corpus test;
};

PreparedData prepare_data(const CellSpec& c);

CellResult run_cell(const CellSpec& c, const CellOptions& options = {});

struct CellEvaluation {
  std::map<double, std::map<std::string, double>> metrics_by_q;
  std::map<double, std::vector<Prediction>> predictions;
};

/// Re-scores a trained checkpoint on the cell's test fold at each q, with the
/// same zero-fill length the training run used.
CellEvaluation evaluate_cell(const CellSpec& c, const Checkpoint& checkpoint, const std::vector<double>& qs);

}  // namespace tiasu

#endif  // TIASU_EXPERIMENT_H_
