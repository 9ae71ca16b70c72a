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

#ifndef TIASU_METRICS_H_
#define TIASU_METRICS_H_

#include <string>
#include <vector>

namespace tiasu {

/// Unweighted average recall over the classes present in `labels`.
double uar(const std::vector<int>& preds, const std::vector<int>& labels);

enum class F1Average { kMacro, kMicro, kWeighted };

/// Macro averages over classes seen in preds or labels; a class absent from
/// both contributes nothing. Weighted uses label support as weights.
double f1(const std::vector<int>& preds, const std::vector<int>& labels, F1Average average = F1Average::kMacro);

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

enum class Metric { kUar, kF1Macro, kF1Micro, kF1Weighted, kAccuracy };
std::string to_string(Metric m);
Metric metric_from_string(const std::string& s);
double compute_metric(Metric m, const std::vector<int>& preds, const std::vector<int>& labels);

}  // namespace tiasu

#endif  // TIASU_METRICS_H_
