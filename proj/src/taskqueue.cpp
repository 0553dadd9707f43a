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

#include "annolab/taskqueue.hpp"

#include "annolab/error.hpp"

namespace annolab {

StoreBackedQueue::StoreBackedQueue(Store& store, std::int64_t lease_ms)
    : store_(store), lease_ms_(lease_ms) {
  if (lease_ms_ <= 0) fail(ErrorCode::kInvalidArgument, "lease duration must be positive");
  for (const auto& rec : store_.list(ListFilter{.kind = EntityKind::kJob})) {
    Job job = rec.payload.get<Job>();
    if (job.status == JobStatus::kQueued) {
      queued_[job.queue_class].insert({job.submitted_at, job.job_id});
    }
    jobs_.emplace(job.job_id, std::move(job));
  }
}

void StoreBackedQueue::set_listener(TransitionListener listener) {
  std::lock_guard lock(mu_);
  listener_ = std::move(listener);
}

Job& StoreBackedQueue::require(const std::string& job_id) {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) fail(ErrorCode::kNotFound, "job " + job_id + " not found");
  return it->second;
}

Job& StoreBackedQueue::require_lease_holder(const std::string& job_id,
                                            const std::string& worker_id,
                                            Timestamp now) {
  Job& job = require(job_id);
  if (job.status != JobStatus::kRunning || !job.lease ||
      job.lease->worker_id != worker_id) {
    auto expired = expired_holders_.find(job_id);
    if (expired != expired_holders_.end() && expired->second.count(worker_id)) {
      fail(ErrorCode::kStaleLease, "lease on job " + job_id + " held by " + worker_id +
                                       " expired and was reclaimed");
    }
    fail(ErrorCode::kNotLeaseHolder,
         "worker " + worker_id + " does not hold the lease on job " + job_id);
  }
  if (now > job.lease->deadline) {
    fail(ErrorCode::kStaleLease, "lease on job " + job_id + " expired");
  }
  return job;
}

// Persists first so a failed write leaves the in-memory queue unchanged.
void StoreBackedQueue::apply(Job& slot, Job next) {
  store_.put(EntityKind::kJob, next.job_id, std::nullopt, Json(next));
  if (slot.status == JobStatus::kQueued) {
    queued_[slot.queue_class].erase({slot.submitted_at, slot.job_id});
  }
  if (next.status == JobStatus::kQueued) {
    queued_[next.queue_class].insert({next.submitted_at, next.job_id});
  }
  slot = std::move(next);
  if (listener_) listener_(slot);
}

void StoreBackedQueue::enqueue(Job job) {
  if (job.status != JobStatus::kQueued) {
    fail(ErrorCode::kInvalidArgument, "only queued jobs can be enqueued");
  }
  if (job.queue_class.empty()) fail(ErrorCode::kInvalidArgument, "empty queue_class");
  if (job.attempt < 1 || job.attempt > job.max_attempts) {
    fail(ErrorCode::kInvalidArgument, "attempt outside [1, max_attempts]");
  }
  std::lock_guard lock(mu_);
  if (jobs_.count(job.job_id) || store_.find(EntityKind::kJob, job.job_id)) {
    fail(ErrorCode::kDuplicate, "job " + job.job_id + " already exists");
  }
  store_.put(EntityKind::kJob, job.job_id, 0, Json(job));
  queued_[job.queue_class].insert({job.submitted_at, job.job_id});
  auto [it, _] = jobs_.emplace(job.job_id, std::move(job));
  if (listener_) listener_(it->second);
}

std::optional<Job> StoreBackedQueue::lease(const std::string& queue_class,
                                           const std::string& worker_id,
                                           Timestamp now) {
  return lease_any({queue_class}, worker_id, now);
}

std::optional<Job> StoreBackedQueue::lease_any(const std::vector<std::string>& classes,
                                               const std::string& worker_id,
                                               Timestamp now) {
  if (worker_id.empty()) fail(ErrorCode::kInvalidArgument, "empty worker_id");
  std::lock_guard lock(mu_);
  for (const auto& cls : classes) {
    auto q = queued_.find(cls);
    if (q == queued_.end() || q->second.empty()) continue;
    Job& slot = jobs_.at(q->second.begin()->second);
    TransitionArgs args;
    args.lease = Lease{worker_id, now + lease_ms_};
    apply(slot, validate_transition(slot, JobEvent::kLeaseGranted, args));
    return slot;
  }
  return std::nullopt;
}

HeartbeatReply StoreBackedQueue::heartbeat(const std::string& job_id,
                                           const std::string& worker_id,
                                           Timestamp now) {
  std::lock_guard lock(mu_);
  Job& slot = require_lease_holder(job_id, worker_id, now);
  Job next = slot;
  next.lease->deadline = now + lease_ms_;
  store_.put(EntityKind::kJob, next.job_id, std::nullopt, Json(next));
  slot = std::move(next);
  return {slot.cancel_requested, slot.lease->deadline};
}

Job StoreBackedQueue::complete(const std::string& job_id, const std::string& worker_id,
                               const CompletionOutcome& result, Timestamp now) {
  std::lock_guard lock(mu_);
  Job& slot = require_lease_holder(job_id, worker_id, now);
  Job next = std::visit(
      [&](const auto& o) -> Job {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, outcome::Ok>) {
          Job j = validate_transition(slot, JobEvent::kCompletedOk);
          j.result = o.result_blob;
          return j;
        } else if constexpr (std::is_same_v<T, outcome::Err>) {
          TransitionArgs args;
          args.reason = o.reason;
          return validate_transition(slot, JobEvent::kCompletedErr, args);
        } else {
          return validate_transition(slot, JobEvent::kCompletedCancelled);
        }
      },
      result);
  apply(slot, std::move(next));
  return slot;
}

Job StoreBackedQueue::cancel(const std::string& job_id) {
  std::lock_guard lock(mu_);
  Job& slot = require(job_id);
  apply(slot, validate_transition(slot, JobEvent::kCancel));
  return slot;
}

Job StoreBackedQueue::restart(const std::string& job_id, Timestamp now) {
  std::lock_guard lock(mu_);
  Job& slot = require(job_id);
  TransitionArgs args;
  args.now = now;
  apply(slot, validate_transition(slot, JobEvent::kRestart, args));
  return slot;
}

std::vector<std::string> StoreBackedQueue::expire_leases(Timestamp now) {
  std::lock_guard lock(mu_);
  std::vector<std::string> affected;
  for (auto& [id, job] : jobs_) {
    if (job.status == JobStatus::kRunning && job.lease && job.lease->deadline < now) {
      expired_holders_[id].insert(job.lease->worker_id);
      apply(job, validate_transition(job, JobEvent::kLeaseExpired));
      affected.push_back(id);
    }
  }
  return affected;
}

QueueStats StoreBackedQueue::stats() const {
  std::lock_guard lock(mu_);
  QueueStats s;
  for (const auto st : {JobStatus::kQueued, JobStatus::kRunning, JobStatus::kSucceeded,
                        JobStatus::kFailed, JobStatus::kCancelled}) {
    s.per_status[st] = 0;
  }
  for (const auto& [id, job] : jobs_) {
    ++s.total;
    ++s.per_status[job.status];
    if (job.status == JobStatus::kQueued) ++s.per_class[job.queue_class].queued;
    if (job.status == JobStatus::kRunning) ++s.per_class[job.queue_class].running;
  }
  return s;
}

std::optional<Job> StoreBackedQueue::find(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

void StoreBackedQueue::forget(const std::string& job_id) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return;
  if (it->second.status == JobStatus::kQueued) {
    queued_[it->second.queue_class].erase({it->second.submitted_at, job_id});
  }
  jobs_.erase(it);
  expired_holders_.erase(job_id);
}

}  // namespace annolab
