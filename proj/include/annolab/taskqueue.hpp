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
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "annolab/domain.hpp"
#include "annolab/store.hpp"

namespace annolab {

inline constexpr std::int64_t kDefaultLeaseMs = 60'000;

struct QueueStats {
  struct ClassCounts {
    std::int64_t queued = 0;
    std::int64_t running = 0;
  };
  std::map<std::string, ClassCounts> per_class;
  /// Every status is present, zero when no job has it.
  std::map<JobStatus, std::int64_t> per_status;
  std::int64_t total = 0;
};

struct HeartbeatReply {
  bool cancel_requested = false;
  Timestamp deadline = 0;
};

namespace outcome {
struct Ok {
  std::string result_blob;
};
struct Err {
  std::string reason;
};
struct Cancelled {};
}  // namespace outcome

using CompletionOutcome = std::variant<outcome::Ok, outcome::Err, outcome::Cancelled>;

/// Queue contract consumed by the API service and the inline worker. All
/// operations are linearizable; none blocks waiting for work. Time is always
/// passed in by the caller.
class JobQueue {
 public:
  virtual ~JobQueue() = default;

  /// Throws kDuplicate for a known job_id, kInvalidArgument unless the job
  /// is queued with a nonempty queue_class.
  virtual void enqueue(Job job) = 0;
  /// Oldest queued job of the class by (submitted_at, job_id), now running.
  virtual std::optional<Job> lease(const std::string& queue_class,
                                   const std::string& worker_id, Timestamp now) = 0;
  virtual HeartbeatReply heartbeat(const std::string& job_id,
                                   const std::string& worker_id, Timestamp now) = 0;
  virtual Job complete(const std::string& job_id, const std::string& worker_id,
                       const CompletionOutcome& outcome, Timestamp now) = 0;
  virtual Job cancel(const std::string& job_id) = 0;
  virtual Job restart(const std::string& job_id, Timestamp now) = 0;
  virtual std::vector<std::string> expire_leases(Timestamp now) = 0;
  virtual QueueStats stats() const = 0;

  virtual std::optional<Job> find(const std::string& job_id) const = 0;
  /// Drops a job from the queue without a state transition (used before a
  /// purge deletes its record).
  virtual void forget(const std::string& job_id) = 0;
};

/// In-process queue persisted through the store: every state change is
/// written to the job record before the call returns, and the queue is
/// rebuilt from those records on construction.
class StoreBackedQueue final : public JobQueue {
 public:
  /// Called with the job's new state after every transition, while the
  /// queue lock is held; must not call back into the queue.
  using TransitionListener = std::function<void(const Job&)>;

  explicit StoreBackedQueue(Store& store, std::int64_t lease_ms = kDefaultLeaseMs);

  void set_listener(TransitionListener listener);
  std::int64_t lease_duration() const { return lease_ms_; }

  void enqueue(Job job) override;
  std::optional<Job> lease(const std::string& queue_class,
                           const std::string& worker_id, Timestamp now) override;
  /// Leases from the first class in `classes` that has work.
  std::optional<Job> lease_any(const std::vector<std::string>& classes,
                               const std::string& worker_id, Timestamp now);
  HeartbeatReply heartbeat(const std::string& job_id, const std::string& worker_id,
                           Timestamp now) override;
  Job complete(const std::string& job_id, const std::string& worker_id,
               const CompletionOutcome& outcome, Timestamp now) override;
  Job cancel(const std::string& job_id) override;
  Job restart(const std::string& job_id, Timestamp now) override;
  std::vector<std::string> expire_leases(Timestamp now) override;
  QueueStats stats() const override;
  std::optional<Job> find(const std::string& job_id) const override;
  void forget(const std::string& job_id) override;

 private:
  using Position = std::pair<Timestamp, std::string>;

  Job& require(const std::string& job_id);
  Job& require_lease_holder(const std::string& job_id, const std::string& worker_id,
                            Timestamp now);
  void apply(Job& slot, Job next);

  Store& store_;
  std::int64_t lease_ms_;
  TransitionListener listener_;

  mutable std::mutex mu_;
  std::map<std::string, Job> jobs_;
  std::map<std::string, std::set<Position>> queued_;
  // Workers whose lease on a job was reclaimed by expire_leases, so their
  // late calls report kStaleLease rather than kNotLeaseHolder.
  std::map<std::string, std::set<std::string>> expired_holders_;
};

}  // namespace annolab
