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

// Command-line front end. Subcommands: synth, pool, augment, train, eval,
// grid, report. Every subcommand accepts --config, --seed, --p, --q and
// --method; flags override values from the config file.
//
// Exit status: 0 success, 1 run failure (structured JSON error on stderr),
// 2 usage error.

#ifndef TIASU_CLI_H_
#define TIASU_CLI_H_

#include "json.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace tiasu {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Replaces ${NAME} and ${NAME:-default} in every string value. An unset
/// variable without a default throws ConfigError.
nlohmann::json interpolate_env(const nlohmann::json& j);
std::string interpolate_env(const std::string& s);
inline std::string interpolate_env(const char* s) { return interpolate_env(std::string(s)); }

/// Parses a JSON config file and interpolates environment variables.
nlohmann::json load_config(const std::filesystem::path& path);

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cli_main(int argc, char** argv);

}  // namespace tiasu

#endif  // TIASU_CLI_H_
