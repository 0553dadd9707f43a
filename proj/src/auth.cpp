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


#include "annolab/auth.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>

#include <vector>

#include "annolab/error.hpp"
#include "annolab/util.hpp"

namespace annolab {
namespace {

constexpr std::size_t kDigestBytes = 32;

std::string to_hex(const unsigned char* data, std::size_t n) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(2 * n, '0');
  for (std::size_t i = 0; i < n; ++i) {
    out[2 * i] = kDigits[data[i] >> 4];
    out[2 * i + 1] = kDigits[data[i] & 0xF];
  }
  return out;
}

std::string derive(std::string_view password, std::string_view salt_hex, int iterations) {
  unsigned char out[kDigestBytes];
  if (PKCS5_PBKDF2_HMAC(password.data(), static_cast<int>(password.size()),
                        reinterpret_cast<const unsigned char*>(salt_hex.data()),
                        static_cast<int>(salt_hex.size()), iterations, EVP_sha256(),
                        sizeof out, out) != 1) {
    fail(ErrorCode::kInternal, "PBKDF2 failed");
  }
  return to_hex(out, sizeof out);
}

}  // namespace

std::string hash_password(std::string_view password, int iterations) {
  const auto salt = random_hex(16);
  return "pbkdf2-sha256$" + std::to_string(iterations) + "$" + salt + "$" +
         derive(password, salt, iterations);
}

bool verify_password(std::string_view password, std::string_view encoded) {
  const auto parts = split(encoded, '$');
  if (parts.size() != 4 || parts[0] != "pbkdf2-sha256") return false;
  int iterations = 0;
  try {
    iterations = std::stoi(parts[1]);
  } catch (const std::exception&) {
    return false;
  }
  if (iterations < 1) return false;
  const auto expected = derive(password, parts[2], iterations);
  return expected.size() == parts[3].size() &&
         CRYPTO_memcmp(expected.data(), parts[3].data(), expected.size()) == 0;
}

std::string new_token() { return random_hex(32); }

}  // namespace annolab
