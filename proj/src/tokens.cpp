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

#include "tiasu/tokens.h"

#include "tiasu/rng.h"

#include <cctype>

namespace tiasu {

std::vector<int> tokenize(std::string_view text, int vocab) {
  std::vector<int> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i) break;
    std::string word(text.substr(i, j - i));
    i = j;

    bool synthetic = word.size() > 1 && word[0] == 'w' && word.size() <= 10;
    for (std::size_t c = 1; synthetic && c < word.size(); ++c)
      synthetic = std::isdigit(static_cast<unsigned char>(word[c])) != 0;
    if (synthetic) {
      const long id = std::stol(word.substr(1));
      if (id < vocab) {
        out.push_back(static_cast<int>(id));
        continue;
      }
    }
    for (auto& ch : word) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    out.push_back(static_cast<int>(fnv1a64(word) % static_cast<std::uint64_t>(vocab)));
  }
  return out;
}

std::string detokenize(const std::vector<int>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += "w" + std::to_string(tokens[i]);
  }
  return out;
}

}  // namespace tiasu
