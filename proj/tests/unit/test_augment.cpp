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

#include "tiasu/augment.h"
#include "tiasu/common.h"
#include "tiasu/synth_bench.h"
#include "tiasu/npy.h"

#include <filesystem>
#include <sstream>

using namespace tiasu;

namespace {

const std::string kFixtures = TIASU_FIXTURES;

Utterance utt(const std::string& id, const std::string& text, int label = 0) {
  Utterance u;
  u.id = id;
  u.text = text;
  u.label = label;
  return u;
}

class FailingRephraser final : public RephraseAdapter {
 public:
  std::string name() const override { return "failing"; }
  std::string mode() const override { return "canned-fixture"; }
  std::string complete(const RephraseRequest&) const override {
    ++calls;
    throw AdapterError("refused");
  }
  mutable int calls = 0;
};

}  // namespace

TEST_CASE("build_prompt bytes") {
  const std::string expect = "Don't repeat my instructions. \nRephrase the following sentence: \nhello there";
  CHECK(build_prompt("hello there") == expect);
  CHECK(build_prompt("hello there") == build_prompt("hello there"));
  CHECK(build_prompt("well it's hard to get the the right the proper finance money to") ==
        "Don't repeat my instructions. \nRephrase the following sentence: \n"
        "well it's hard to get the the right the proper finance money to");
  CHECK_THROWS_AS(build_prompt(""), InputError);
  CHECK_THROWS_AS(build_prompt("   "), InputError);
  CHECK(build_prompt("abc", "Say: TRANSCRIPTIONS!") == "Say: abc!");
  CHECK_THROWS_AS(build_prompt("abc", "no placeholder"), ConfigError);
}

TEST_CASE("canned rephraser and post-processing") {
  const CannedRephraser canned = CannedRephraser::from_file(kFixtures + "/rephrase/canned.json");

  const auto slue = rephrase(canned, utt("slue", "well it's hard to get the the right the proper finance money to"));
  REQUIRE(slue.text);
  CHECK(*slue.text == "Securing adequate financial resources can be a challenge.");
  CHECK(slue.raw == "Securing adequate financial resources can be a challenge.");

  const auto quoted = rephrase(canned, utt("h", "hello there"));
  REQUIRE(quoted.text);
  CHECK(*quoted.text == "Hi, how are you doing?");

  const auto prefixed = rephrase(canned, utt("w", "wake me up at seven am"));
  REQUIRE(prefixed.text);
  CHECK(*prefixed.text == "Please set an alarm to wake me at 7 a.m.");

  const auto echo = rephrase(canned, utt("e", "echo this"));
  CHECK_FALSE(echo.text);
  CHECK_FALSE(echo.error.empty());

  const auto missing = rephrase(canned, utt("m", "not in the fixture"));
  CHECK_FALSE(missing.text);

  const std::string p = build_prompt("x y");
  CHECK_FALSE(postprocess_response(p, p));
  CHECK_FALSE(postprocess_response("  \n \"\" ", p));
  CHECK(*postprocess_response("  'a b'  ", p) == "a b");
  CHECK(*postprocess_response("\xE2\x80\x9Cquoted\xE2\x80\x9D", p) == "quoted");
  CHECK(*postprocess_response("line one\nline two", p) == "line one line two");
}

TEST_CASE("command rephraser, failure fallback and archive replay") {
  tiasu::testing::TempDir dir("rephrase");
  CommandRephraser cmd({"sh", "-c", "cat > /dev/null; printf '\"A new phrasing.\"\\n'"});
  RephraseOptions opts;
  opts.archive_dir = dir / "raw";
  const auto first = rephrase(cmd, utt("c1", "some words"), opts);
  REQUIRE(first.text);
  CHECK(*first.text == "A new phrasing.");
  REQUIRE_FALSE(first.raw_response_path.empty());
  CHECK(std::filesystem::exists(first.raw_response_path));

  // The archived response is replayed without invoking the adapter.
  CommandRephraser broken({"sh", "-c", "exit 4"});
  const auto again = rephrase(broken, utt("c1", "some words"), opts);
  CHECK(again.text == first.text);

  FailingRephraser failing;
  failing.retries = 2;
  const auto out = rephrase(failing, utt("f", "words"));
  CHECK_FALSE(out.text);
  CHECK(failing.calls == 3);
  CHECK(out.error.find("refused") != std::string::npos);
}

TEST_CASE("build_aug_set counts and labels") {
  auto world = std::make_shared<const WorldParams>(make_world(TaskProfile::kContentDominant, 3, 4, 3));
  std::vector<Utterance> text_only;
  Corpus c = sample_corpus(*world, 10, 3);
  for (auto u : c.utterances) {
    u.speech.reset();
    text_only.push_back(u);
  }
  std::vector<std::shared_ptr<const ExpertAdapter>> experts;
  for (int k = 0; k < 3; ++k) experts.push_back(std::make_shared<SyntheticExpert>(world, k));
  ClassResampleRephraser rephraser(world, 5);
  const AugmentedSet set = build_aug_set(text_only, rephraser, experts, StylePolicy::kNone);
  CHECK(set.entries.size() == 10);
  CHECK(set.num_candidates() == 30);
  CHECK(set.skipped.empty());
  for (const auto& u : text_only) {
    const AugEntry& e = set.entries.at(u.id);
    CHECK(e.label == u.label);
    CHECK(e.text_orig == u.text);
    CHECK_FALSE(e.text_aug.empty());
    CHECK(e.candidates.size() == 3);
    for (const auto& cand : e.candidates) CHECK(cand.payload.has_frames());
  }
  const GenerationPool pool = aug_pool(set);
  CHECK(pool.num_candidates() == 30);

  // Same seed, same rephrases.
  const AugmentedSet again = build_aug_set(text_only, rephraser, experts, StylePolicy::kNone);
  for (const auto& [id, e] : set.entries) CHECK(again.entries.at(id).text_aug == e.text_aug);

  FailingRephraser failing;
  const AugmentedSet none = build_aug_set(text_only, failing, experts, StylePolicy::kNone);
  CHECK(none.empty());
  CHECK(none.skipped.size() == 10);

  std::vector<Utterance> with_test = text_only;
  with_test[0].split = "test";
  CHECK_THROWS_AS(build_aug_set(with_test, rephraser, experts, StylePolicy::kNone), InputError);

  tiasu::testing::TempDir dir("augman");
  write_aug_manifest(set, dir / "aug.jsonl");
  int lines = 0;
  std::istringstream in(read_file(dir / "aug.jsonl"));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.contains("text_orig"));
      CHECK(j.contains("text_aug"));
      CHECK(j.contains("adapter"));
      ++lines;
    }
  CHECK(lines == 10);
}
