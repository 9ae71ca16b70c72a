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

// Frozen speech and text encoders behind a uniform contract. The toy encoders
// are deterministic in-process stand-ins; the registry encoders read features
// produced by pretrained foundation models (e.g. a 12-layer speech encoder)
// from a model registry directory:
//
//   <registry>/<model>/config.json             {"num_layers", "hidden_size", ...}
//   <registry>/<model>/features/<key>.npy      speech stack, shape (L+1, T, D)
//   <registry>/<model>/text/<hash>.npy         text hidden states, shape (T, D)

#ifndef TIASU_ENCODERS_H_
#define TIASU_ENCODERS_H_

#include "tiasu/common.h"
#include "tiasu/corpus.h"

#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tiasu {

/// Embedding output plus the outputs of all L encoder layers.
struct SpeechLayerStack {
  std::vector<FrameMatrix> hidden;  // L+1 entries, each T x D
  double frame_rate = 50.0;

  int num_layers() const { return static_cast<int>(hidden.size()) - 1; }
  Eigen::Index frames() const { return hidden.empty() ? 0 : hidden.front().rows(); }
  Eigen::Index dim() const { return hidden.empty() ? 0 : hidden.front().cols(); }
  /// Throws InputError when shapes disagree, L < 1, T < 1 or entries are non-finite.
  void validate() const;
};

struct TextHidden {
  FrameMatrix hidden;               // T_text x D_text
  std::vector<unsigned char> mask;  // 1 = real token

  Eigen::Index length() const;  // number of unmasked positions
};

/// Mean over unmasked positions.
FrameMatrix masked_mean(const TextHidden& text);

class SpeechEncoder {
 public:
  virtual ~SpeechEncoder() = default;
  virtual std::string name() const = 0;
  virtual int num_layers() const = 0;
  virtual int dim() const = 0;
  virtual SpeechLayerStack encode(const SpeechPayload& payload) const = 0;
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual TextHidden encode(std::string_view text) const = 0;
  /// Pads every sequence to the longest one; padded positions carry mask 0.
  std::vector<TextHidden> encode_batch(const std::vector<std::string>& texts) const;
};

struct ToySpeechEncoderOptions {
  int input_dim = 16;
  int dim = 16;
  int num_layers = 4;
  std::uint64_t seed = 17;
};

/// Fixed random projection followed by residual tanh mixing layers with a
/// three-tap temporal average. Bias-free, so a zero payload encodes to zeros.
class ToySpeechEncoder final : public SpeechEncoder {
 public:
  explicit ToySpeechEncoder(const ToySpeechEncoderOptions& options = {});
  std::string name() const override { return "toy-speech"; }
  int num_layers() const override { return static_cast<int>(layers_.size()); }
  int dim() const override { return static_cast<int>(projection_.cols()); }
  int input_dim() const { return static_cast<int>(projection_.rows()); }
  SpeechLayerStack encode(const SpeechPayload& payload) const override;
  SpeechLayerStack encode_frames(const FrameMatrix& frames) const;

 private:
  FrameMatrix projection_;
  std::vector<FrameMatrix> layers_;
};

struct ToyTextEncoderOptions {
  int vocab = 64;
  int dim = 16;
  std::uint64_t seed = 29;
};

/// Token embedding lookup and one fixed tanh mixing layer over each token and
/// its in-sequence neighbours.
class ToyTextEncoder final : public TextEncoder {
 public:
  explicit ToyTextEncoder(const ToyTextEncoderOptions& options = {});
  std::string name() const override { return "toy-text"; }
  int dim() const override { return static_cast<int>(embedding_.cols()); }
  int vocab() const { return static_cast<int>(embedding_.rows()); }
  TextHidden encode(std::string_view text) const override;
  TextHidden encode_tokens(const std::vector<int>& tokens) const;

 private:
  FrameMatrix embedding_;
  FrameMatrix self_mix_;
  FrameMatrix context_mix_;
};

struct RegistryModelConfig {
  int num_layers = 0;
  int hidden_size = 0;
  double frame_rate = 50.0;
  int sample_rate = 16000;
  int frame_length = 400;  // receptive field of the convolutional front end, in samples
  int frame_hop = 320;

  /// Frames produced for an input of `samples` audio samples.
  Eigen::Index expected_frames(std::size_t samples) const;
};

RegistryModelConfig load_registry_config(const std::filesystem::path& model_dir);

/// Full-scale speech encoder adapter. Features are looked up by payload key;
/// when absent and an extractor command is configured, the command is run as
/// `<command...> <audio_path> <output.npy>` and its output cached.
class RegistrySpeechEncoder final : public SpeechEncoder {
 public:
  RegistrySpeechEncoder(std::filesystem::path registry, std::string model,
                        std::vector<std::string> extractor_command = {}, int timeout_seconds = 600);
  std::string name() const override { return model_; }
  int num_layers() const override { return config_.num_layers; }
  int dim() const override { return config_.hidden_size; }
  SpeechLayerStack encode(const SpeechPayload& payload) const override;
  const RegistryModelConfig& config() const { return config_; }

 private:
  std::filesystem::path dir_;
  std::string model_;
  RegistryModelConfig config_;
  std::vector<std::string> extractor_;
  int timeout_seconds_;
};

/// Full-scale text encoder adapter keyed by a hash of the transcript.
class RegistryTextEncoder final : public TextEncoder {
 public:
  RegistryTextEncoder(std::filesystem::path registry, std::string model);
  std::string name() const override { return model_; }
  int dim() const override { return config_.hidden_size; }
  TextHidden encode(std::string_view text) const override;
  static std::string text_key(std::string_view text);

 private:
  std::filesystem::path dir_;
  std::string model_;
  RegistryModelConfig config_;
};

void write_stack_npy(const std::filesystem::path& path, const SpeechLayerStack& stack);
SpeechLayerStack read_stack_npy(const std::filesystem::path& path, double frame_rate = 50.0);

/// Number of samples in a PCM WAV file.
std::size_t wav_num_samples(const std::filesystem::path& path);
void write_wav_pcm16(const std::filesystem::path& path, const std::vector<float>& samples, int sample_rate);

/// Thread-safe memo table for encoded features.
template <typename V>
class KeyedCache {
 public:
  std::shared_ptr<const V> get_or_compute(const std::string& key, const std::function<V()>& compute) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = map_.find(key);
      if (it != map_.end()) return it->second;
    }
    auto value = std::make_shared<const V>(compute());
    std::lock_guard<std::mutex> lock(mu_);
    return map_.emplace(key, std::move(value)).first->second;
  }
  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return map_.size();
  }

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::shared_ptr<const V>> map_;
};

}  // namespace tiasu

#endif  // TIASU_ENCODERS_H_
