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

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "annolab/clock.hpp"
#include "annolab/domain.hpp"
#include "annolab/error.hpp"
#include "annolab/plugins.hpp"
#include "annolab/store.hpp"
#include "annolab/taskqueue.hpp"
#include "annolab/worker.hpp"

namespace httplib {
class Server;
}

namespace annolab {

inline constexpr std::size_t kMaxBodyBytes = 64u << 20;
/// Owner of the base models; not an account anyone can log in as.
inline constexpr const char* kSystemOwner = "system";

/// HTTP status for an error code.
int http_status(ErrorCode code);
/// `{"error": {"code": ..., "message": ...}}`
Json error_body(ErrorCode code, const std::string& message);

struct ServiceConfig {
  std::int64_t lease_ms = kDefaultLeaseMs;
  std::size_t max_body_bytes = kMaxBodyBytes;
  std::chrono::milliseconds expire_interval{1000};
  int password_iterations = 60'000;
};

struct Caller {
  std::string user_id;
  std::string username;
  Role role = Role::kUser;
};

/// The REST service. All state lives in the store and the queue; the
/// object itself only holds configuration and the expiry thread.
class ApiService {
 public:
  ApiService(Store& store, const Clock& clock, const PluginRegistry& registry,
             ServiceConfig config = {});
  ~ApiService();
  ApiService(const ApiService&) = delete;
  ApiService& operator=(const ApiService&) = delete;

  /// Registers every route (and the error and size-limit handlers).
  void install(httplib::Server& server);
  /// `[{method, path, auth}]` for every installed route.
  Json route_table() const;

  /// Creates a base model per predict task of every registered plugin and
  /// repairs model status left behind by a crash. Idempotent.
  void bootstrap();
  /// Creates an account; throws kDuplicate for a taken username.
  std::string create_user(const std::string& username, const std::string& password,
                          Role role, const std::string& display_name = {});
  bool user_exists(const std::string& username) const;
  /// Throws kUnauthorized on bad credentials.
  Json issue_token(const std::string& username, const std::string& password);
  /// Throws kUnauthorized for an unknown token.
  Caller authenticate_token(const std::string& token) const;

  /// Starts / stops the background lease-expiry loop.
  void start_background();
  void stop_background();

  // Worker protocol, shared by the HTTP handlers and the inline worker.
  std::optional<TaskAssignment> worker_lease(const std::vector<std::string>& classes,
                                             const std::string& worker_id);
  HeartbeatReply worker_heartbeat(const std::string& job_id, const std::string& worker_id);
  std::int64_t worker_append_log(const std::string& job_id, const std::string& worker_id,
                                 std::int64_t offset, std::string_view payload);
  Job worker_complete(const std::string& job_id, const std::string& worker_id,
                      const ExecutionOutcome& outcome);
  Bytes worker_blob(const std::string& blob_id) const;

  StoreBackedQueue& queue() { return queue_; }
  Store& store() { return store_; }
  const Clock& clock() const { return clock_; }

 private:
  struct Route {
    std::string method;
    std::string path;
    std::string auth;
  };

  void on_transition(const Job& job);
  void reconcile();
  bool blob_referenced(const std::string& blob_id) const;

  Store& store_;
  const Clock& clock_;
  const PluginRegistry& registry_;
  ServiceConfig config_;
  StoreBackedQueue queue_;
  std::vector<Route> routes_;

  std::mutex bg_mu_;
  std::condition_variable bg_cv_;
  bool bg_stop_ = false;
  std::thread bg_thread_;
};

/// Runs worker tasks against an ApiService in the same process.
class InlineWorkerBackend final : public WorkerBackend {
 public:
  explicit InlineWorkerBackend(ApiService& service) : service_(service) {}

  std::optional<TaskAssignment> lease(const std::vector<std::string>& queue_classes,
                                      const std::string& worker_id) override {
    return service_.worker_lease(queue_classes, worker_id);
  }
  bool heartbeat(const std::string& job_id, const std::string& worker_id) override {
    return service_.worker_heartbeat(job_id, worker_id).cancel_requested;
  }
  void append_log(const std::string& job_id, const std::string& worker_id,
                  std::int64_t offset, std::string_view payload) override {
    service_.worker_append_log(job_id, worker_id, offset, payload);
  }
  void complete(const std::string& job_id, const std::string& worker_id,
                const ExecutionOutcome& outcome) override {
    service_.worker_complete(job_id, worker_id, outcome);
  }
  Bytes fetch_blob(const std::string& blob_id) override { return service_.worker_blob(blob_id); }

 private:
  ApiService& service_;
};

/// httplib server bound to one address, listening on its own thread.
class HttpFrontend {
 public:
  explicit HttpFrontend(ApiService& service,
                        std::optional<std::string> static_dir = std::nullopt);
  ~HttpFrontend();

  /// Port 0 picks a free port. Returns the bound port; throws kIo when the
  /// address is unavailable.
  int bind(const std::string& host, int port);
  void start();
  void stop();
  int port() const { return port_; }

 private:
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace annolab
