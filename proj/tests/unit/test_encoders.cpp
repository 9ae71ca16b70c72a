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

#include "doctest.h"
#include "test_util.h"

#include "tiasu/encoders.h"
#include "tiasu/npy.h"

using namespace tiasu;
using tiasu::testing::TempDir;

namespace {
const std::filesystem::path kFixtures = TIASU_FIXTURES;
}

TEST_CASE("toy speech encoder on zeros gives a finite all-zero stack") {
  const ToySpeechEncoder enc;
  const SpeechLayerStack s = enc.encode(make_payload(FrameMatrix::Zero(20, 16)));
  CHECK(s.num_layers() == 4);
  CHECK(s.frames() == 20);
  for (const auto& h : s.hidden) {
    CHECK(h.allFinite());
    CHECK(h.cwiseAbs().maxCoeff() == 0.0f);
  }
}

TEST_CASE("toy speech encoder is frozen") {
  const ToySpeechEncoder enc;
  Rng rng = make_stream(1, "enc-test");
  FrameMatrix f(9, 16);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = static_cast<float>(uniform01(rng) - 0.5);
  const auto a = enc.encode(make_payload(f));
  const auto b = ToySpeechEncoder().encode(make_payload(f));
  for (int l = 0; l <= a.num_layers(); ++l) CHECK(a.hidden[l] == b.hidden[l]);
  CHECK_THROWS_AS(enc.encode(make_payload(FrameMatrix::Zero(3, 5))), InputError);
}

TEST_CASE("toy text encoder shapes and determinism") {
  const ToyTextEncoder enc;
  const TextHidden one = enc.encode("w5");
  CHECK(one.hidden.rows() == 1);
  CHECK(one.hidden.cols() == enc.dim());
  CHECK(enc.encode("w1 w2 w3").hidden == ToyTextEncoder().encode("w1 w2 w3").hidden);
  CHECK(enc.encode("w1 w2 w3").hidden != enc.encode("w1 w2 w4").hidden);
}

TEST_CASE("padded batch positions are excluded from the masked mean") {
  const ToyTextEncoder enc;
  const std::vector<std::string> texts = {"w1 w2", "w3 w4 w5 w6 w7", "w8"};
  const auto batch = enc.encode_batch(texts);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    CHECK(batch[i].hidden.rows() == 5);
    const FrameMatrix trimmed = masked_mean(enc.encode(texts[i]));
    CHECK((masked_mean(batch[i]) - trimmed).cwiseAbs().maxCoeff() < 1e-6);
  }
  CHECK(batch[0].length() == 2);
}

TEST_CASE("registry speech encoder on one second of 16 kHz audio") {
  const RegistrySpeechEncoder enc(kFixtures / "registry", "speech-base-12l");
  CHECK(enc.num_layers() == 12);
  SpeechPayload p;
  p.key = "one_second";
  p.audio_path = (kFixtures / "audio" / "one_second.wav").string();
  CHECK(wav_num_samples(p.audio_path) == 16000);
  CHECK(enc.config().expected_frames(16000) == 49);
  const SpeechLayerStack s = enc.encode(p);
  CHECK(s.num_layers() == 12);
  CHECK(s.hidden.size() == 13);
  CHECK(s.frames() == 49);
  CHECK(s.dim() == 8);
  SpeechPayload missing;
  missing.key = "absent";
  CHECK_THROWS_AS(enc.encode(missing), AdapterError);
}

TEST_CASE("registry speech encoder runs the extractor on a cache miss") {
  TempDir dir("registry");
  std::filesystem::copy(kFixtures / "registry" / "speech-base-12l", dir / "m", std::filesystem::copy_options::recursive);
  std::filesystem::remove_all(dir / "m" / "features");
  const std::string src = (kFixtures / "registry" / "speech-base-12l" / "features" / "one_second.npy").string();
  const RegistrySpeechEncoder enc(dir.path(), "m", {"sh", "-c", "cp '" + src + "' \"$2\"", "extract"});
  SpeechPayload p;
  p.key = "clip";
  p.audio_path = (kFixtures / "audio" / "one_second.wav").string();
  CHECK(enc.encode(p).num_layers() == 12);
  CHECK(std::filesystem::exists(dir / "m" / "features" / "clip.npy"));

  // Features with the wrong frame count for the audio are rejected.
  const FrameMatrix h = FrameMatrix::Zero(10, 8);
  SpeechLayerStack bad;
  for (int l = 0; l <= 12; ++l) bad.hidden.push_back(h);
  write_stack_npy(dir / "m" / "features" / "short.npy", bad);
  p.key = "short";
  CHECK_THROWS_AS(enc.encode(p), AdapterError);
}

TEST_CASE("registry text encoder reads cached hidden states") {
  const RegistryTextEncoder enc(kFixtures / "registry", "text-base");
  const TextHidden h = enc.encode("hello there");
  CHECK(h.hidden.rows() == 3);
  CHECK(h.hidden.cols() == 8);
  CHECK(h.length() == 3);
  CHECK_THROWS_AS(enc.encode("not cached"), AdapterError);
}

TEST_CASE("stack npy round trip") {
  TempDir dir("stack");
  SpeechLayerStack s;
  for (int l = 0; l < 3; ++l) s.hidden.push_back(FrameMatrix::Constant(4, 2, static_cast<float>(l)));
  write_stack_npy(dir / "s.npy", s);
  const SpeechLayerStack back = read_stack_npy(dir / "s.npy");
  REQUIRE(back.hidden.size() == 3);
  for (int l = 0; l < 3; ++l) CHECK(back.hidden[l] == s.hidden[l]);
}
