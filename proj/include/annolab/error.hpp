// Copyright 2026 The AnnoLab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
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

namespace annolab {

/// Machine-readable failure categories. The REST layer maps each one to a
/// fixed HTTP status (see api.cpp), so adding a code means extending that
/// table as well.
enum class ErrorCode {
  kInvalidArgument,
  kInvalidState,
  kNotFound,
  kDuplicate,
  kVersionConflict,
  kCorrupted,
  kContiguity,
  kNotLeaseHolder,
  kStaleLease,
  kUnauthorized,
  kForbidden,
  kPayloadTooLarge,
  kIo,
  kExternal,
  kInternal,
};

std::string_view to_string(ErrorCode code);
/// Inverse of to_string; unknown names map to kInternal.
ErrorCode error_code_from_string(std::string_view name);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace annolab
