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

// Minimal NumPy .npy (format 1.0) reader and writer for dense float arrays.
// Sidecar payloads (frame matrices, layer stacks) are stored this way so that
// external Python tooling can produce and inspect them directly.

#ifndef TIASU_NPY_H_
#define TIASU_NPY_H_

#include "tiasu/common.h"

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tiasu {

struct NpyArray {
  std::vector<std::size_t> shape;
  std::vector<float> data;  // C order

  std::size_t size() const;
};

/// Parses .npy bytes; accepts little-endian <f4 and <f8 (converted to float).
NpyArray parse_npy(std::string_view bytes);
std::string encode_npy(std::span<const std::size_t> shape, std::span<const float> data);

NpyArray read_npy(const std::filesystem::path& path);

/// Writes via a temporary file and rename so readers never see partial files.
void write_npy(const std::filesystem::path& path, std::span<const std::size_t> shape,
               std::span<const float> data);

void write_frames_npy(const std::filesystem::path& path, const FrameMatrix& frames);
FrameMatrix read_frames_npy(const std::filesystem::path& path);
FrameMatrix frames_from_npy(const NpyArray& array);

bool looks_like_npy(std::string_view bytes);

/// Atomic whole-file write (temporary + rename).
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace tiasu

#endif  // TIASU_NPY_H_
