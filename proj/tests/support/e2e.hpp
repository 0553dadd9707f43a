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

#include <sys/types.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "annolab/domain.hpp"

namespace annolab::testing {

/// A free TCP port on 127.0.0.1 at the time of the call.
int pick_free_port();

/// `annolab serve` as a child process.
class ServeProcess {
 public:
  ServeProcess(std::string binary, std::filesystem::path data_dir,
               std::vector<std::string> extra_args = {});
  ~ServeProcess();

  /// Spawns the server and waits until /api/meta answers; throws on timeout
  /// or early exit.
  void start();
  /// SIGKILL, no chance to clean up.
  void kill_hard();
  /// SIGTERM; returns the exit status.
  int stop();
  bool running() const { return pid_ > 0; }
  int port() const { return port_; }
  std::string url() const;
  std::filesystem::path log_path() const;

 private:
  std::string binary_;
  std::filesystem::path data_dir_;
  std::vector<std::string> extra_;
  int port_;
  pid_t pid_ = -1;
  int starts_ = 0;
};

struct HttpReply {
  int status = 0;
  std::string body;
  Json json() const;
};

/// Minimal REST client; transport failures come back as status 0.
class Rest {
 public:
  explicit Rest(std::string url, std::string token = {});
  HttpReply get(const std::string& path) const;
  HttpReply post(const std::string& path, const Json& body) const;
  HttpReply post_raw(const std::string& path, const std::string& body,
                     const std::string& content_type) const;
  HttpReply patch(const std::string& path, const Json& body) const;
  HttpReply del(const std::string& path) const;
  Rest as(std::string token) const { return Rest(url_, std::move(token)); }
  const std::string& url() const { return url_; }

 private:
  std::string url_;
  std::string token_;
};

/// HTTP server on 127.0.0.1 answering every POST through `handler`, for
/// exercising outbound calls.
class MockHttpServer {
 public:
  using Handler = std::function<HttpReply(const std::string& path, const std::string& body)>;
  explicit MockHttpServer(Handler handler);
  ~MockHttpServer();
  std::string url() const;
  int requests() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Polls until `done` returns true or `timeout_s` passes.
bool poll_until(const std::function<bool()>& done, double timeout_s, int interval_ms = 100);

struct LoopReport {
  bool passed = false;
  std::string failure;
  double cer_before = 0.0;
  double cer_after = 0.0;
  int steps_completed = 0;
  double seconds = 0.0;
};

/// The REST-only life cycle: accounts, dataset upload, fine-tune, predict
/// with a CER check, sharing, visibility for a second user, deletion.
/// `between_steps` runs after every completed step (and may restart the
/// server); `url` is re-read after each call. Every earlier step is
/// re-verified after the hook.
LoopReport run_rest_loop(const std::function<std::string()>& url,
                         const std::function<void(int step)>& between_steps,
                         const std::string& admin_user, const std::string& admin_pass,
                         std::uint64_t corpus_seed = 1);

}  // namespace annolab::testing
