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

#ifndef TIASU_PROCESS_H_
#define TIASU_PROCESS_H_

#include <string>
#include <vector>

namespace tiasu {

struct ProcessResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string output;  // captured stdout
};

/// Runs argv[0] (searched on PATH) with a wall-clock timeout; the child is
/// killed when the timeout expires. `input` is written to the child's stdin.
ProcessResult run_process(const std::vector<std::string>& argv, int timeout_seconds,
                          const std::string& input = {});

/// Splits a command line on whitespace, honouring single and double quotes.
std::vector<std::string> split_command(const std::string& command);

}  // namespace tiasu

#endif  // TIASU_PROCESS_H_
