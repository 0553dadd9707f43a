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

#include <string>
#include <string_view>

namespace annolab {

/// "pbkdf2-sha256$<iterations>$<salt hex>$<digest hex>".
std::string hash_password(std::string_view password, int iterations = 60'000);
bool verify_password(std::string_view password, std::string_view encoded);

/// 32 random bytes as 64 lowercase hex chars.
std::string new_token();

}  // namespace annolab
