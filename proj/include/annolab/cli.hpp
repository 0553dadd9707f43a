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

#include <iosfwd>
#include <string>
#include <vector>

namespace annolab {

/// Client exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitJobFailed = 3;

/// `annolab client ...` without the leading "client". Reads ANNOLAB_SERVER
/// and ANNOLAB_TOKEN when the flags are absent.
int run_client(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// `annolab serve ...` / `annolab worker ...`; block until SIGINT or SIGTERM.
int run_serve(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_worker(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Entry point of the annolab binary.
int run_cli(int argc, char** argv);

}  // namespace annolab
