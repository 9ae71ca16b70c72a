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

#ifndef TIASU_TOKENS_H_
#define TIASU_TOKENS_H_

#include <string>
#include <string_view>
#include <vector>

namespace tiasu {

/// Whitespace tokenizer over a fixed vocabulary. Words of the form "w<n>"
/// with n < vocab map to id n (the synthetic world's surface form); any
/// other word is lower-cased and hashed into the vocabulary.
std::vector<int> tokenize(std::string_view text, int vocab);

/// Inverse of the synthetic surface form: {3, 17} -> "w3 w17".
std::string detokenize(const std::vector<int>& tokens);

}  // namespace tiasu

#endif  // TIASU_TOKENS_H_
