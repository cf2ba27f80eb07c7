// Copyright (c) 2026 The merlin-despeckle Authors. All Rights Reserved.
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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace merlin {

/// Failure categories surfaced by the library. The CLI maps
/// `invalid_argument`/`config` to exit code 1 and everything else to 2.
enum class ErrorCode {
  io,
  bad_magic,
  truncated,
  non_finite,
  invalid_argument,
  dimension_mismatch,
  shape_mismatch,
  unknown_input,
  backward_before_forward,
  not_independent,
  singular,
  empty_support,
  config,
  diverged,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::io: return "io";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::unknown_input: return "unknown_input";
    case ErrorCode::backward_before_forward: return "backward_before_forward";
    case ErrorCode::not_independent: return "not_independent";
    case ErrorCode::singular: return "singular";
    case ErrorCode::empty_support: return "empty_support";
    case ErrorCode::config: return "config";
    case ErrorCode::diverged: return "diverged";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace merlin
