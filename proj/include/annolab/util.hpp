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

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace annolab {

using Bytes = std::string;

std::string base64_encode(std::string_view data);
/// Throws Error(kInvalidArgument) on characters outside the standard alphabet.
std::string base64_decode(std::string_view text);

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

/// `n_bytes` bytes from the OS CSPRNG, hex encoded (2 * n_bytes chars).
std::string random_hex(std::size_t n_bytes);

/// Decodes UTF-8 into Unicode scalar values. Malformed sequences decode to
/// U+FFFD one byte at a time.
std::u32string utf8_decode(std::string_view text);
std::string utf8_encode(std::u32string_view text);
std::string utf8_encode(char32_t c);

std::vector<std::string> split(std::string_view text, char sep);
std::string join(std::span<const std::string> parts, std::string_view sep);

}  // namespace annolab
