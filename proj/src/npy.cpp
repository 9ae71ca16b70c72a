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

#include "tiasu/npy.h"

#include <atomic>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

namespace tiasu {
namespace {

constexpr std::string_view kMagic = "\x93NUMPY";

std::size_t product(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

std::size_t NpyArray::size() const { return product(shape); }

bool looks_like_npy(std::string_view bytes) {
  return bytes.size() >= 10 && bytes.substr(0, kMagic.size()) == kMagic;
}

NpyArray parse_npy(std::string_view bytes) {
  if (!looks_like_npy(bytes)) throw ParseError("npy: bad magic");
  const auto major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) |
                 (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw ParseError("npy: truncated header");
    for (int i = 0; i < 4; ++i)
      header_len |= static_cast<std::size_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    offset = 12;
  } else {
    throw ParseError("npy: unsupported version " + std::to_string(major));
  }
  if (bytes.size() < offset + header_len) throw ParseError("npy: truncated header");
  const std::string header(bytes.substr(offset, header_len));
  offset += header_len;

  std::smatch m;
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']+)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  if (!std::regex_search(header, m, descr_re)) throw ParseError("npy: missing descr");
  const std::string descr = m[1];
  if (!std::regex_search(header, m, order_re)) throw ParseError("npy: missing fortran_order");
  if (m[1] == "True") throw ParseError("npy: fortran order not supported");
  if (!std::regex_search(header, m, shape_re)) throw ParseError("npy: missing shape");

  NpyArray out;
  std::stringstream ss(m[1].str());
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    out.shape.push_back(static_cast<std::size_t>(std::stoull(item.substr(first))));
  }
  const std::size_t n = out.size();
  out.data.resize(n);
  if (descr == "<f4") {
    if (bytes.size() < offset + 4 * n) throw ParseError("npy: truncated data");
    std::memcpy(out.data.data(), bytes.data() + offset, 4 * n);
  } else if (descr == "<f8") {
    if (bytes.size() < offset + 8 * n) throw ParseError("npy: truncated data");
    for (std::size_t i = 0; i < n; ++i) {
      double v;
      std::memcpy(&v, bytes.data() + offset + 8 * i, 8);
      out.data[i] = static_cast<float>(v);
    }
  } else {
    throw ParseError("npy: unsupported dtype " + descr);
  }
  return out;
}

std::string encode_npy(std::span<const std::size_t> shape, std::span<const float> data) {
  if (product(shape) != data.size()) throw InputError("npy: shape does not match data size");
  std::string dims;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) dims += ", ";
    dims += std::to_string(shape[i]);
  }
  if (shape.size() == 1) dims += ",";
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + dims + "), }";
  // Pad so that the data starts on a 64-byte boundary.
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::string out(kMagic);
  out.push_back('\x01');
  out.push_back('\x00');
  out.push_back(static_cast<char>(header.size() & 0xff));
  out.push_back(static_cast<char>((header.size() >> 8) & 0xff));
  out += header;
  out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()) % 100000) +
         "_" + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

NpyArray read_npy(const std::filesystem::path& path) {
  try {
    return parse_npy(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_npy(const std::filesystem::path& path, std::span<const std::size_t> shape,
               std::span<const float> data) {
  write_file_atomic(path, encode_npy(shape, data));
}

void write_frames_npy(const std::filesystem::path& path, const FrameMatrix& frames) {
  const std::size_t shape[2] = {static_cast<std::size_t>(frames.rows()),
                                static_cast<std::size_t>(frames.cols())};
  write_npy(path, shape, std::span<const float>(frames.data(), static_cast<std::size_t>(frames.size())));
}

FrameMatrix frames_from_npy(const NpyArray& array) {
  if (array.shape.size() != 2) throw InputError("expected a 2-D frame array");
  FrameMatrix m(static_cast<Eigen::Index>(array.shape[0]), static_cast<Eigen::Index>(array.shape[1]));
  std::memcpy(m.data(), array.data.data(), array.data.size() * sizeof(float));
  return m;
}

FrameMatrix read_frames_npy(const std::filesystem::path& path) { return frames_from_npy(read_npy(path)); }

}  // namespace tiasu
