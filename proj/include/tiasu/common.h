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

#ifndef TIASU_COMMON_H_
#define TIASU_COMMON_H_

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tiasu {

/// Frame matrix: rows are time steps, columns are feature dimensions.
using FrameMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// Error hierarchy. Everything thrown by the library derives from Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

/// A TTS, LLM or encoder backend failed (timeout, nonzero exit, bad payload).
class AdapterError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Samples round(fraction * n) with ties going up.
inline std::size_t round_half_up(double fraction, std::size_t n) {
  // The epsilon absorbs representation error such as 0.15 * 10 = 1.4999999999999998.
  const double x = fraction * static_cast<double>(n) + 0.5 + 1e-9;
  return static_cast<std::size_t>(x);
}

}  // namespace tiasu

#endif  // TIASU_COMMON_H_
