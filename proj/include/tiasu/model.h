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

// Downstream classifier over frozen encoder outputs.
//
//   speech: softmax(layer_logits)-weighted sum of the L+1 hidden layers
//           -> pointwise conv (D -> 256) -> ReLU -> pointwise conv (256 -> 256)
//           -> mean over time                                    => 256
//   text:   2-layer bidirectional GRU, 128 units per direction,
//           masked mean over time                                => 256
//   head:   [speech | text | speech;text] -> FC(256) -> ReLU -> FC(C)
//
// The second convolution is linear and commutes with the temporal mean, so it
// is evaluated after pooling; the result is identical to convolving every frame.
//
// All parameter tensors are row-major with the row-vector convention y = x W + b.

#ifndef TIASU_MODEL_H_
#define TIASU_MODEL_H_

#include "tiasu/common.h"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tiasu {

enum class Modality { kSpeech, kText, kMultimodal };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

inline bool uses_speech(Modality m) { return m != Modality::kText; }
inline bool uses_text(Modality m) { return m != Modality::kSpeech; }

struct ModelSpec {
  Modality mode = Modality::kMultimodal;
  int num_classes = 4;
  int num_layers = 4;  // L; the stack carries L+1 hidden states
  int speech_dim = 16;
  int text_dim = 16;
  int conv_channels = 256;
  int gru_layers = 2;
  int gru_hidden = 128;  // per direction
  int fc_hidden = 256;

  int speech_embedding() const { return conv_channels; }
  int text_embedding() const { return 2 * gru_hidden; }
  int classifier_input() const;
  /// Closed-form count of learnable scalars in the active heads.
  std::size_t parameter_count() const;
  void validate() const;
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

template <typename T>
struct GruDirection {
  Mat<T> w_ih;  // in x 3H, gate order [reset | update | new]
  Mat<T> w_hh;  // H x 3H
  Mat<T> b_ih;  // 1 x 3H
  Mat<T> b_hh;  // 1 x 3H
};

template <typename T>
struct DownstreamParams {
  Mat<T> layer_logits;  // 1 x (L+1)
  Mat<T> conv1_w, conv1_b, conv2_w, conv2_b;
  std::vector<GruDirection<T>> gru;  // index = layer * 2 + direction (0 forward, 1 backward)
  Mat<T> fc1_w, fc1_b, fc2_w, fc2_b;

  /// Calls f(name, group, tensor) for every non-empty tensor in a fixed order.
  /// Groups: "layer_logits", "conv", "gru", "fc".
  template <typename F>
  void visit(F&& f);
  template <typename F>
  void visit(F&& f) const;

  /// Same shapes, all zeros.
  DownstreamParams zeros_like() const;
  std::size_t size() const;
  template <typename U>
  DownstreamParams<U> cast() const;
};

/// One speech input: the L+1 hidden layers of a single utterance.
template <typename T>
using LayerStackRef = const std::vector<Mat<T>>*;

template <typename T>
struct ModelBatch {
  std::vector<LayerStackRef<T>> speech;                // used by speech/mm modes
  std::vector<const Mat<T>*> text;                     // T_b x D_text, used by text/mm modes
  std::vector<const std::vector<unsigned char>*> text_mask;  // optional; null means all valid
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

template <typename T>
class DownstreamModel {
 public:
  DownstreamModel() = default;
  DownstreamModel(const ModelSpec& spec, std::uint64_t seed);
  DownstreamModel(const ModelSpec& spec, DownstreamParams<T> params);

  const ModelSpec& spec() const { return spec_; }
  DownstreamParams<T>& params() { return params_; }
  const DownstreamParams<T>& params() const { return params_; }

  /// Logits, B x C.
  Mat<T> forward(const ModelBatch<T>& batch) const;
  /// Mean cross-entropy over the batch; accumulates d(loss)/d(params) into grad.
  T loss_and_gradient(const ModelBatch<T>& batch, DownstreamParams<T>& grad) const;
  T loss(const ModelBatch<T>& batch) const;

  // Per-stage operations on single inputs.
  Mat<T> layer_weights() const;                                 // softmax(layer_logits)
  Mat<T> combine_layers(const std::vector<Mat<T>>& stack) const;  // T x D
  Mat<T> speech_head(const Mat<T>& frames) const;               // 1 x 256
  Mat<T> text_head(const Mat<T>& hidden, const std::vector<unsigned char>* mask = nullptr) const;  // 1 x 256
  /// Missing embeddings must be absent exactly when the mode does not use them.
  Mat<T> fuse_classify(const std::optional<Mat<T>>& speech_vec, const std::optional<Mat<T>>& text_vec) const;

  template <typename U>
  DownstreamModel<U> cast() const {
    return DownstreamModel<U>(spec_, params_.template cast<U>());
  }

 private:
  struct Cache;
  Mat<T> run(const ModelBatch<T>& batch, Cache* cache) const;
  void backward(const ModelBatch<T>& batch, const Cache& cache, const Mat<T>& dlogits,
                DownstreamParams<T>& grad) const;

  ModelSpec spec_;
  DownstreamParams<T> params_;
};

/// softmax over a row vector.
template <typename T>
Mat<T> softmax_row(const Mat<T>& logits);

/// Model parameters plus the training metadata needed to reproduce evaluation.
struct Checkpoint {
  ModelSpec spec;
  DownstreamParams<float> params;
  nlohmann::json meta = nlohmann::json::object();
};

/// Versioned binary: "TIASUCKP", u32 version, u64 header size, JSON header
/// (spec, tensor table, meta), then raw little-endian float32 tensors.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

template <typename T>
template <typename F>
void DownstreamParams<T>::visit(F&& f) {
  auto v = [&](const char* name, const char* group, Mat<T>& m) {
    if (m.size() > 0) f(std::string(name), std::string(group), m);
  };
  v("layer_logits", "layer_logits", layer_logits);
  v("conv1_w", "conv", conv1_w);
  v("conv1_b", "conv", conv1_b);
  v("conv2_w", "conv", conv2_w);
  v("conv2_b", "conv", conv2_b);
  for (std::size_t i = 0; i < gru.size(); ++i) {
    const std::string p = "gru" + std::to_string(i / 2) + (i % 2 ? "_bwd_" : "_fwd_");
    if (gru[i].w_ih.size()) f(p + "w_ih", std::string("gru"), gru[i].w_ih);
    if (gru[i].w_hh.size()) f(p + "w_hh", std::string("gru"), gru[i].w_hh);
    if (gru[i].b_ih.size()) f(p + "b_ih", std::string("gru"), gru[i].b_ih);
    if (gru[i].b_hh.size()) f(p + "b_hh", std::string("gru"), gru[i].b_hh);
  }
  v("fc1_w", "fc", fc1_w);
  v("fc1_b", "fc", fc1_b);
  v("fc2_w", "fc", fc2_w);
  v("fc2_b", "fc", fc2_b);
}

template <typename T>
template <typename F>
void DownstreamParams<T>::visit(F&& f) const {
  const_cast<DownstreamParams<T>*>(this)->visit(
      [&](const std::string& name, const std::string& group, Mat<T>& m) { f(name, group, static_cast<const Mat<T>&>(m)); });
}

template <typename T>
template <typename U>
DownstreamParams<U> DownstreamParams<T>::cast() const {
  DownstreamParams<U> out;
  out.layer_logits = layer_logits.template cast<U>();
  out.conv1_w = conv1_w.template cast<U>();
  out.conv1_b = conv1_b.template cast<U>();
  out.conv2_w = conv2_w.template cast<U>();
  out.conv2_b = conv2_b.template cast<U>();
  for (const auto& g : gru)
    out.gru.push_back({g.w_ih.template cast<U>(), g.w_hh.template cast<U>(), g.b_ih.template cast<U>(),
                       g.b_hh.template cast<U>()});
  out.fc1_w = fc1_w.template cast<U>();
  out.fc1_b = fc1_b.template cast<U>();
  out.fc2_w = fc2_w.template cast<U>();
  out.fc2_b = fc2_b.template cast<U>();
  return out;
}

}  // namespace tiasu

#endif  // TIASU_MODEL_H_
