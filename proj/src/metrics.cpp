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

#include "tiasu/metrics.h"

#include "tiasu/common.h"

#include <algorithm>
#include <map>

namespace tiasu {

namespace {

struct Counts {
  std::map<int, double> tp, fp, fn, support;
};

Counts count(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) throw InputError("preds and labels differ in length");
  if (labels.empty()) throw InputError("metric of an empty prediction set");
  Counts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || preds[i] < 0) throw InputError("negative class index");
    c.support[labels[i]] += 1;
    c.tp[labels[i]] += 0;
    c.tp[preds[i]] += 0;
    if (preds[i] == labels[i]) {
      c.tp[labels[i]] += 1;
    } else {
      c.fp[preds[i]] += 1;
      c.fn[labels[i]] += 1;
    }
  }
  return c;
}

double class_f1(double tp, double fp, double fn) {
  const double denom = 2 * tp + fp + fn;
  return denom > 0 ? 2 * tp / denom : 0.0;
}

}  // namespace

double uar(const std::vector<int>& preds, const std::vector<int>& labels) {
  const Counts c = count(preds, labels);
  double sum = 0;
  for (const auto& [cls, n] : c.support) sum += c.tp.at(cls) / n;
  return sum / static_cast<double>(c.support.size());
}

double f1(const std::vector<int>& preds, const std::vector<int>& labels, F1Average average) {
  Counts c = count(preds, labels);
  if (average == F1Average::kMicro) {
    double tp = 0, fp = 0, fn = 0;
    for (const auto& [cls, v] : c.tp) {
      tp += v;
      fp += c.fp[cls];
      fn += c.fn[cls];
    }
    return class_f1(tp, fp, fn);
  }
  double sum = 0, weight = 0;
  for (const auto& [cls, v] : c.tp) {
    const double w = average == F1Average::kMacro ? 1.0 : c.support[cls];
    sum += w * class_f1(v, c.fp[cls], c.fn[cls]);
    weight += w;
  }
  return sum / weight;
}

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  const Counts c = count(preds, labels);
  double tp = 0;
  for (const auto& [cls, v] : c.tp) tp += v;
  return tp / static_cast<double>(labels.size());
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::kUar: return "uar";
    case Metric::kF1Macro: return "f1_macro";
    case Metric::kF1Micro: return "f1_micro";
    case Metric::kF1Weighted: return "f1_weighted";
    case Metric::kAccuracy: return "accuracy";
  }
  return "uar";
}

Metric metric_from_string(const std::string& s) {
  for (Metric m : {Metric::kUar, Metric::kF1Macro, Metric::kF1Micro, Metric::kF1Weighted, Metric::kAccuracy})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown metric '" + s + "'");
}

double compute_metric(Metric m, const std::vector<int>& preds, const std::vector<int>& labels) {
  switch (m) {
    case Metric::kUar: return uar(preds, labels);
    case Metric::kF1Macro: return f1(preds, labels, F1Average::kMacro);
    case Metric::kF1Micro: return f1(preds, labels, F1Average::kMicro);
    case Metric::kF1Weighted: return f1(preds, labels, F1Average::kWeighted);
    case Metric::kAccuracy: return accuracy(preds, labels);
  }
  return 0.0;
}

}  // namespace tiasu
