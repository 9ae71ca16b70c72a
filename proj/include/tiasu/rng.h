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

#ifndef TIASU_RNG_H_
#define TIASU_RNG_H_

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <string_view>

namespace tiasu {

using Rng = std::mt19937_64;

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t v);

/// Mixes a value through the splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t v);

/// Derives an independent generator from a seed, a stream name and salts.
///
/// Every stochastic step in the library draws from its own named stream so
/// that, for example, changing the test missing ratio never perturbs the
/// training mask, and re-sampling in epoch e+1 is independent of epoch e.
Rng make_stream(std::uint64_t seed, std::string_view name,
                std::initializer_list<std::uint64_t> salts = {});

/// Uniform real in [0, 1) with 53 bits of resolution.
double uniform01(Rng& rng);

/// Uniform integer in [0, n).
std::size_t uniform_below(Rng& rng, std::size_t n);

}  // namespace tiasu

#endif  // TIASU_RNG_H_
