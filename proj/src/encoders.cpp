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

#include "tiasu/encoders.h"

#include "tiasu/npy.h"
#include "tiasu/process.h"
#include "tiasu/rng.h"
#include "tiasu/tokens.h"

#include "json.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace tiasu {

namespace {

FrameMatrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  FrameMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(dist(rng));
  return m;
}

void require_finite(const FrameMatrix& m, const char* what) {
  if (!m.allFinite()) throw InputError(std::string(what) + " contains non-finite values");
}

// Three-tap temporal average with clamped edges.
FrameMatrix temporal_mix(const FrameMatrix& h) {
  const Eigen::Index t = h.rows();
  FrameMatrix out(t, h.cols());
  for (Eigen::Index i = 0; i < t; ++i) {
    const Eigen::Index a = i > 0 ? i - 1 : 0;
    const Eigen::Index b = i + 1 < t ? i + 1 : t - 1;
    out.row(i) = (h.row(a) + h.row(i) + h.row(b)) / 3.0f;
  }
  return out;
}

std::uint32_t read_u32(const std::string& b, std::size_t off) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + off, 4);
  return v;
}

std::uint16_t read_u16(const std::string& b, std::size_t off) {
  std::uint16_t v;
  std::memcpy(&v, b.data() + off, 2);
  return v;
}

}  // namespace

void SpeechLayerStack::validate() const {
  if (hidden.size() < 2) throw InputError("layer stack needs the embedding output and at least one layer");
  const auto t = hidden.front().rows();
  const auto d = hidden.front().cols();
  if (t < 1 || d < 1) throw InputError("layer stack has an empty layer");
  for (const auto& h : hidden) {
    if (h.rows() != t || h.cols() != d) throw InputError("layer stack shapes disagree");
    require_finite(h, "layer stack");
  }
}

Eigen::Index TextHidden::length() const {
  Eigen::Index n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

FrameMatrix masked_mean(const TextHidden& text) {
  FrameMatrix out = FrameMatrix::Zero(1, text.hidden.cols());
  Eigen::Index n = 0;
  for (Eigen::Index t = 0; t < text.hidden.rows(); ++t) {
    if (!text.mask[static_cast<std::size_t>(t)]) continue;
    out += text.hidden.row(t);
    ++n;
  }
  if (n > 0) out /= static_cast<float>(n);
  return out;
}

std::vector<TextHidden> TextEncoder::encode_batch(const std::vector<std::string>& texts) const {
  std::vector<TextHidden> out;
  out.reserve(texts.size());
  Eigen::Index longest = 0;
  for (const auto& t : texts) {
    out.push_back(encode(t));
    longest = std::max(longest, out.back().hidden.rows());
  }
  for (auto& h : out) {
    const Eigen::Index len = h.hidden.rows();
    if (len == longest) continue;
    FrameMatrix padded = FrameMatrix::Zero(longest, h.hidden.cols());
    padded.topRows(len) = h.hidden;
    h.hidden = std::move(padded);
    h.mask.resize(static_cast<std::size_t>(longest), 0);
  }
  return out;
}

ToySpeechEncoder::ToySpeechEncoder(const ToySpeechEncoderOptions& options) {
  if (options.num_layers < 1) throw ConfigError("speech encoder needs at least one layer");
  Rng rng = make_stream(options.seed, "toy_speech_encoder");
  projection_ = gaussian(rng, options.input_dim, options.dim, 1.0 / std::sqrt(static_cast<double>(options.input_dim)));
  for (int l = 0; l < options.num_layers; ++l)
    layers_.push_back(gaussian(rng, options.dim, options.dim, 1.0 / std::sqrt(static_cast<double>(options.dim))));
}

SpeechLayerStack ToySpeechEncoder::encode(const SpeechPayload& payload) const {
  if (!payload.has_frames()) throw InputError("toy speech encoder needs a frame payload");
  return encode_frames(*payload.frames);
}

SpeechLayerStack ToySpeechEncoder::encode_frames(const FrameMatrix& frames) const {
  if (frames.rows() < 1) throw InputError("speech payload has no frames");
  if (frames.cols() != projection_.rows())
    throw InputError("speech payload has " + std::to_string(frames.cols()) + " features, encoder expects " +
                     std::to_string(projection_.rows()));
  require_finite(frames, "speech payload");
  SpeechLayerStack stack;
  stack.hidden.reserve(layers_.size() + 1);
  stack.hidden.push_back(frames * projection_);
  for (const auto& w : layers_) {
    const FrameMatrix& prev = stack.hidden.back();
    FrameMatrix next = prev + (temporal_mix(prev) * w).array().tanh().matrix();
    stack.hidden.push_back(std::move(next));
  }
  return stack;
}

ToyTextEncoder::ToyTextEncoder(const ToyTextEncoderOptions& options) {
  Rng rng = make_stream(options.seed, "toy_text_encoder");
  embedding_ = gaussian(rng, options.vocab, options.dim, 1.0);
  self_mix_ = gaussian(rng, options.dim, options.dim, 1.0 / std::sqrt(static_cast<double>(options.dim)));
  context_mix_ = gaussian(rng, options.dim, options.dim, 0.5 / std::sqrt(static_cast<double>(options.dim)));
}

TextHidden ToyTextEncoder::encode(std::string_view text) const {
  return encode_tokens(tokenize(text, vocab()));
}

TextHidden ToyTextEncoder::encode_tokens(const std::vector<int>& tokens) const {
  if (tokens.empty()) throw InputError("cannot encode an empty token sequence");
  const auto len = static_cast<Eigen::Index>(tokens.size());
  FrameMatrix emb(len, embedding_.cols());
  for (Eigen::Index t = 0; t < len; ++t) {
    const int tok = tokens[static_cast<std::size_t>(t)];
    if (tok < 0 || tok >= vocab()) throw InputError("token id outside encoder vocabulary");
    emb.row(t) = embedding_.row(tok);
  }
  FrameMatrix context = FrameMatrix::Zero(len, emb.cols());
  for (Eigen::Index t = 0; t < len; ++t) {
    if (t > 0) context.row(t) += emb.row(t - 1);
    if (t + 1 < len) context.row(t) += emb.row(t + 1);
  }
  TextHidden out;
  out.hidden = (emb * self_mix_ + context * context_mix_).array().tanh().matrix();
  out.mask.assign(static_cast<std::size_t>(len), 1);
  return out;
}

Eigen::Index RegistryModelConfig::expected_frames(std::size_t samples) const {
  if (samples < static_cast<std::size_t>(frame_length)) return 0;
  return static_cast<Eigen::Index>((samples - static_cast<std::size_t>(frame_length)) /
                                   static_cast<std::size_t>(frame_hop)) + 1;
}

RegistryModelConfig load_registry_config(const std::filesystem::path& model_dir) {
  const auto path = model_dir / "config.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  RegistryModelConfig c;
  c.num_layers = j.at("num_layers").get<int>();
  c.hidden_size = j.at("hidden_size").get<int>();
  c.frame_rate = j.value("frame_rate", 50.0);
  c.sample_rate = j.value("sample_rate", 16000);
  c.frame_length = j.value("frame_length", 400);
  c.frame_hop = j.value("frame_hop", 320);
  if (c.num_layers < 1 || c.hidden_size < 1) throw ConfigError(path.string() + ": invalid model dimensions");
  return c;
}

RegistrySpeechEncoder::RegistrySpeechEncoder(std::filesystem::path registry, std::string model,
                                             std::vector<std::string> extractor_command, int timeout_seconds)
    : dir_(registry / model),
      model_(std::move(model)),
      config_(load_registry_config(dir_)),
      extractor_(std::move(extractor_command)),
      timeout_seconds_(timeout_seconds) {}

SpeechLayerStack RegistrySpeechEncoder::encode(const SpeechPayload& payload) const {
  if (payload.key.empty()) throw InputError("registry encoder needs a payload key");
  const auto path = dir_ / "features" / (payload.key + ".npy");
  if (!std::filesystem::exists(path)) {
    if (extractor_.empty() || payload.audio_path.empty())
      throw AdapterError(model_ + ": no cached features for '" + payload.key + "'");
    std::filesystem::create_directories(path.parent_path());
    auto argv = extractor_;
    argv.push_back(payload.audio_path);
    argv.push_back(path.string());
    const auto r = run_process(argv, timeout_seconds_);
    if (r.timed_out) throw AdapterError(model_ + ": feature extractor timed out on '" + payload.key + "'");
    if (r.exit_code != 0 || !std::filesystem::exists(path))
      throw AdapterError(model_ + ": feature extractor failed on '" + payload.key + "'");
  }
  SpeechLayerStack stack = read_stack_npy(path, config_.frame_rate);
  stack.validate();
  if (stack.num_layers() != config_.num_layers)
    throw AdapterError(model_ + ": expected " + std::to_string(config_.num_layers) + " layers, features have " +
                       std::to_string(stack.num_layers()));
  if (stack.dim() != config_.hidden_size) throw AdapterError(model_ + ": hidden size mismatch");
  const std::filesystem::path audio = payload.audio_path;
  if (audio.extension() == ".wav" && std::filesystem::exists(audio)) {
    const auto expected = config_.expected_frames(wav_num_samples(audio));
    if (expected != stack.frames())
      throw AdapterError(model_ + ": audio implies " + std::to_string(expected) + " frames, features have " +
                         std::to_string(stack.frames()));
  }
  return stack;
}

RegistryTextEncoder::RegistryTextEncoder(std::filesystem::path registry, std::string model)
    : dir_(registry / model), model_(std::move(model)), config_(load_registry_config(dir_)) {}

std::string RegistryTextEncoder::text_key(std::string_view text) { return hex64(fnv1a64(text)); }

TextHidden RegistryTextEncoder::encode(std::string_view text) const {
  if (text.empty()) throw InputError("cannot encode empty text");
  const auto path = dir_ / "text" / (text_key(text) + ".npy");
  if (!std::filesystem::exists(path)) throw AdapterError(model_ + ": no cached text features for transcript");
  TextHidden out;
  out.hidden = read_frames_npy(path);
  if (out.hidden.cols() != config_.hidden_size) throw AdapterError(model_ + ": hidden size mismatch");
  require_finite(out.hidden, "text features");
  out.mask.assign(static_cast<std::size_t>(out.hidden.rows()), 1);
  return out;
}

void write_stack_npy(const std::filesystem::path& path, const SpeechLayerStack& stack) {
  stack.validate();
  const std::size_t shape[3] = {stack.hidden.size(), static_cast<std::size_t>(stack.frames()),
                                static_cast<std::size_t>(stack.dim())};
  std::vector<float> data;
  data.reserve(shape[0] * shape[1] * shape[2]);
  for (const auto& h : stack.hidden) data.insert(data.end(), h.data(), h.data() + h.size());
  write_npy(path, shape, data);
}

SpeechLayerStack read_stack_npy(const std::filesystem::path& path, double frame_rate) {
  const NpyArray a = read_npy(path);
  if (a.shape.size() != 3) throw InputError(path.string() + ": expected a (L+1, T, D) array");
  SpeechLayerStack stack;
  stack.frame_rate = frame_rate;
  const auto t = static_cast<Eigen::Index>(a.shape[1]);
  const auto d = static_cast<Eigen::Index>(a.shape[2]);
  for (std::size_t l = 0; l < a.shape[0]; ++l) {
    FrameMatrix h(t, d);
    std::memcpy(h.data(), a.data.data() + l * a.shape[1] * a.shape[2], sizeof(float) * a.shape[1] * a.shape[2]);
    stack.hidden.push_back(std::move(h));
  }
  return stack;
}

std::size_t wav_num_samples(const std::filesystem::path& path) {
  const std::string b = read_file(path);
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0)
    throw ParseError(path.string() + ": not a RIFF/WAVE file");
  std::size_t off = 12;
  std::uint16_t channels = 1, bits = 16;
  while (off + 8 <= b.size()) {
    const std::string id = b.substr(off, 4);
    const std::uint32_t size = read_u32(b, off + 4);
    if (id == "fmt ") {
      channels = read_u16(b, off + 10);
      bits = read_u16(b, off + 22);
    } else if (id == "data") {
      const std::size_t bytes = std::min<std::size_t>(size, b.size() - off - 8);
      return bytes / (static_cast<std::size_t>(channels) * (bits / 8));
    }
    off += 8 + size + (size & 1);
  }
  throw ParseError(path.string() + ": no data chunk");
}

void write_wav_pcm16(const std::filesystem::path& path, const std::vector<float>& samples, int sample_rate) {
  auto put32 = [](std::string& s, std::uint32_t v) { s.append(reinterpret_cast<const char*>(&v), 4); };
  auto put16 = [](std::string& s, std::uint16_t v) { s.append(reinterpret_cast<const char*>(&v), 2); };
  std::string b = "RIFF";
  put32(b, static_cast<std::uint32_t>(36 + samples.size() * 2));
  b += "WAVEfmt ";
  put32(b, 16);
  put16(b, 1);
  put16(b, 1);
  put32(b, static_cast<std::uint32_t>(sample_rate));
  put32(b, static_cast<std::uint32_t>(sample_rate * 2));
  put16(b, 2);
  put16(b, 16);
  b += "data";
  put32(b, static_cast<std::uint32_t>(samples.size() * 2));
  for (float s : samples) {
    const float c = std::max(-1.0f, std::min(1.0f, s));
    put16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0f))));
  }
  write_file_atomic(path, b);
}

}  // namespace tiasu
