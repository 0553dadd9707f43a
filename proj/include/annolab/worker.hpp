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
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "annolab/domain.hpp"
#include "annolab/plugins.hpp"
#include "annolab/util.hpp"

namespace annolab {

/// Process exit code for a rejected worker token.
inline constexpr int kExitBadToken = 3;

/// A leased job as delivered by `POST /api/worker/lease`.
struct TaskAssignment {
  std::string job_id;
  TaskKind kind = TaskKind::kPredict;
  std::string plugin_id;
  std::string task_name;
  std::optional<std::string> model_artifact_ref;
  std::string input_ref;
  Json params = Json::object();
  int attempt = 1;
  /// Current length of the job log; the worker appends from here.
  std::int64_t log_offset = 0;
  std::int64_t lease_ms = 0;

  Json to_json() const;
  static TaskAssignment from_json(const Json& doc);
};

/// Server side of the worker protocol. Implementations throw Error with
/// kIo for transport failures (retried), kUnauthorized for a rejected
/// token (fatal), and kNotLeaseHolder / kStaleLease / kNotFound when the
/// lease is gone.
class WorkerBackend {
 public:
  virtual ~WorkerBackend() = default;
  virtual std::optional<TaskAssignment> lease(const std::vector<std::string>& queue_classes,
                                              const std::string& worker_id) = 0;
  /// Returns cancel_requested.
  virtual bool heartbeat(const std::string& job_id, const std::string& worker_id) = 0;
  virtual void append_log(const std::string& job_id, const std::string& worker_id,
                          std::int64_t offset, std::string_view payload) = 0;
  virtual void complete(const std::string& job_id, const std::string& worker_id,
                        const ExecutionOutcome& outcome) = 0;
  virtual Bytes fetch_blob(const std::string& blob_id) = 0;
};

/// Talks to an api-service over HTTP with a worker-role bearer token.
class HttpWorkerBackend final : public WorkerBackend {
 public:
  HttpWorkerBackend(std::string server_url, std::string token);

  std::optional<TaskAssignment> lease(const std::vector<std::string>& queue_classes,
                                      const std::string& worker_id) override;
  bool heartbeat(const std::string& job_id, const std::string& worker_id) override;
  void append_log(const std::string& job_id, const std::string& worker_id,
                  std::int64_t offset, std::string_view payload) override;
  void complete(const std::string& job_id, const std::string& worker_id,
                const ExecutionOutcome& outcome) override;
  Bytes fetch_blob(const std::string& blob_id) override;

 private:
  Json post(const std::string& path, const Json& body, int* status = nullptr);

  std::string server_url_;
  std::string token_;
};

struct WorkerConfig {
  std::string worker_id;
  std::vector<std::string> queue_classes;
  int parallelism = 2;
  std::chrono::milliseconds poll_interval{500};
  /// Zero means a third of the lease duration the server reports.
  std::chrono::milliseconds heartbeat_interval{0};
  std::chrono::milliseconds log_flush_interval{250};
  std::chrono::milliseconds max_backoff{30'000};
  /// On stop(): finish in-flight tasks instead of abandoning them to lease
  /// expiry.
  bool drain_on_stop = false;

  void validate() const;
};

/// Host name plus a random suffix.
std::string default_worker_id();

struct WorkerStats {
  std::int64_t leased = 0;
  std::int64_t completed = 0;
  std::int64_t abandoned = 0;
  int max_in_flight = 0;
};

/// Runs up to `parallelism` tasks at once. Each slot leases under its own
/// identity `<worker_id>/<slot>`, so a completion can only ever be
/// attributed to the lease that slot was granted.
class Worker {
 public:
  Worker(WorkerConfig config, WorkerBackend& backend, const PluginRegistry& registry);

  /// Blocks until stop() or a rejected token. Returns 0 or kExitBadToken.
  int run();
  /// Safe from any thread, including signal-watcher threads.
  void stop();
  WorkerStats stats() const;

 private:
  void slot_loop(int slot);
  void run_task(const TaskAssignment& task, const std::string& slot_id);
  bool wait_for(std::chrono::milliseconds d);

  WorkerConfig config_;
  WorkerBackend& backend_;
  const PluginRegistry& registry_;

  std::atomic<bool> stopping_{false};
  std::atomic<bool> bad_token_{false};
  std::mutex mu_;
  std::condition_variable cv_;

  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
  std::atomic<std::int64_t> leased_{0};
  std::atomic<std::int64_t> completed_{0};
  std::atomic<std::int64_t> abandoned_{0};
};

}  // namespace annolab
