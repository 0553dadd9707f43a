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


#include "annolab/worker.hpp"

#include <unistd.h>

#include <algorithm>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "annolab/error.hpp"

namespace annolab {
namespace {

bool lease_lost(ErrorCode code) {
  return code == ErrorCode::kNotLeaseHolder || code == ErrorCode::kStaleLease ||
         code == ErrorCode::kNotFound;
}

[[noreturn]] void fail_from_response(const httplib::Response& res) {
  const auto doc = Json::parse(res.body, nullptr, false);
  if (doc.is_object() && doc.contains("error")) {
    const auto& err = doc.at("error");
    fail(error_code_from_string(err.value("code", std::string{})),
         err.value("message", std::string{}));
  }
  if (res.status == 401) fail(ErrorCode::kUnauthorized, "unauthorized");
  fail(ErrorCode::kIo, "server responded " + std::to_string(res.status));
}

}  // namespace

Json TaskAssignment::to_json() const {
  Json doc = {{"job_id", job_id},   {"kind", to_string(kind)},
              {"plugin_id", plugin_id}, {"task_name", task_name},
              {"input_ref", input_ref}, {"params", params},
              {"attempt", attempt},     {"log_offset", log_offset},
              {"lease_ms", lease_ms}};
  if (model_artifact_ref) doc["model_artifact_ref"] = *model_artifact_ref;
  return doc;
}

TaskAssignment TaskAssignment::from_json(const Json& doc) {
  TaskAssignment t;
  t.job_id = doc.at("job_id").get<std::string>();
  t.kind = parse_enum<TaskKind>(doc.at("kind").get<std::string>());
  t.plugin_id = doc.at("plugin_id").get<std::string>();
  t.task_name = doc.at("task_name").get<std::string>();
  t.input_ref = doc.at("input_ref").get<std::string>();
  if (doc.contains("model_artifact_ref") && doc.at("model_artifact_ref").is_string()) {
    t.model_artifact_ref = doc.at("model_artifact_ref").get<std::string>();
  }
  t.params = doc.value("params", Json::object());
  t.attempt = doc.value("attempt", 1);
  t.log_offset = doc.value("log_offset", std::int64_t{0});
  t.lease_ms = doc.value("lease_ms", std::int64_t{0});
  return t;
}

// ---------------------------------------------------------------------------
// HTTP backend

HttpWorkerBackend::HttpWorkerBackend(std::string server_url, std::string token)
    : server_url_(std::move(server_url)), token_(std::move(token)) {
  while (!server_url_.empty() && server_url_.back() == '/') server_url_.pop_back();
}

Json HttpWorkerBackend::post(const std::string& path, const Json& body, int* status) {
  httplib::Client client(server_url_);
  client.set_bearer_token_auth(token_);
  client.set_connection_timeout(5, 0);
  client.set_read_timeout(30, 0);
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res) {
    fail(ErrorCode::kIo, "cannot reach " + server_url_ + ": " + httplib::to_string(res.error()));
  }
  if (status) *status = res->status;
  if (res->status == 204) return nullptr;
  if (res->status < 200 || res->status >= 300) fail_from_response(*res);
  if (res->body.empty()) return Json::object();
  auto doc = Json::parse(res->body, nullptr, false);
  if (doc.is_discarded()) fail(ErrorCode::kIo, "malformed response from " + path);
  return doc;
}

std::optional<TaskAssignment> HttpWorkerBackend::lease(
    const std::vector<std::string>& queue_classes, const std::string& worker_id) {
  int status = 0;
  auto doc = post("/api/worker/lease",
                  {{"queue_classes", queue_classes}, {"worker_id", worker_id}}, &status);
  if (status == 204) return std::nullopt;
  return TaskAssignment::from_json(doc);
}

bool HttpWorkerBackend::heartbeat(const std::string& job_id, const std::string& worker_id) {
  const auto doc = post("/api/worker/heartbeat", {{"job_id", job_id}, {"worker_id", worker_id}});
  return doc.value("cancel_requested", false);
}

void HttpWorkerBackend::append_log(const std::string& job_id, const std::string& worker_id,
                                   std::int64_t offset, std::string_view payload) {
  post("/api/worker/logs", {{"job_id", job_id},
                            {"worker_id", worker_id},
                            {"offset", offset},
                            {"payload_b64", base64_encode(payload)}});
}

void HttpWorkerBackend::complete(const std::string& job_id, const std::string& worker_id,
                                 const ExecutionOutcome& outcome) {
  Json body = {{"job_id", job_id}, {"worker_id", worker_id}};
  if (outcome.ok()) {
    body["outcome"] = "ok";
    body["result_b64"] = base64_encode(outcome.result());
  } else if (outcome.cancelled()) {
    body["outcome"] = "cancelled";
  } else {
    body["outcome"] = "err";
    body["reason"] = outcome.reason();
  }
  post("/api/worker/complete", body);
}

Bytes HttpWorkerBackend::fetch_blob(const std::string& blob_id) {
  httplib::Client client(server_url_);
  client.set_bearer_token_auth(token_);
  client.set_connection_timeout(5, 0);
  client.set_read_timeout(60, 0);
  auto res = client.Get("/api/worker/blobs/" + blob_id);
  if (!res) {
    fail(ErrorCode::kIo, "cannot reach " + server_url_ + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) fail_from_response(*res);
  return res->body;
}

// ---------------------------------------------------------------------------
// Worker

void WorkerConfig::validate() const {
  if (parallelism < 1) fail(ErrorCode::kInvalidArgument, "parallelism must be at least 1");
  if (queue_classes.empty()) fail(ErrorCode::kInvalidArgument, "no queue classes subscribed");
  for (const auto& q : queue_classes) {
    if (q.empty()) fail(ErrorCode::kInvalidArgument, "empty queue class name");
  }
  if (worker_id.empty()) fail(ErrorCode::kInvalidArgument, "empty worker id");
}

std::string default_worker_id() {
  char host[256] = {};
  if (gethostname(host, sizeof host - 1) != 0 || host[0] == '\0') {
    std::snprintf(host, sizeof host, "worker");
  }
  return std::string(host) + "-" + random_hex(3);
}

Worker::Worker(WorkerConfig config, WorkerBackend& backend, const PluginRegistry& registry)
    : config_(std::move(config)), backend_(backend), registry_(registry) {
  if (config_.worker_id.empty()) config_.worker_id = default_worker_id();
  config_.validate();
}

int Worker::run() {
  spdlog::info("worker {} polling [{}] with {} slot(s)", config_.worker_id,
               join(config_.queue_classes, ","), config_.parallelism);
  std::vector<std::thread> slots;
  for (int i = 0; i < config_.parallelism; ++i) {
    slots.emplace_back([this, i] { slot_loop(i); });
  }
  for (auto& t : slots) t.join();
  return bad_token_ ? kExitBadToken : 0;
}

void Worker::stop() {
  stopping_ = true;
  cv_.notify_all();
}

WorkerStats Worker::stats() const {
  return {leased_.load(), completed_.load(), abandoned_.load(), max_in_flight_.load()};
}

bool Worker::wait_for(std::chrono::milliseconds d) {
  std::unique_lock lock(mu_);
  return !cv_.wait_for(lock, d, [this] { return stopping_.load(); });
}

void Worker::slot_loop(int slot) {
  const std::string slot_id = config_.worker_id + "/" + std::to_string(slot);
  std::chrono::milliseconds backoff{0};
  while (!stopping_) {
    std::optional<TaskAssignment> task;
    try {
      task = backend_.lease(config_.queue_classes, slot_id);
      backoff = std::chrono::milliseconds{0};
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kUnauthorized || e.code() == ErrorCode::kForbidden) {
        spdlog::error("worker token rejected: {}", e.what());
        bad_token_ = true;
        stop();
        return;
      }
      backoff = backoff.count() == 0 ? config_.poll_interval
                                     : std::min(backoff * 2, config_.max_backoff);
      spdlog::warn("{}: lease failed ({}); retrying in {} ms", slot_id, e.what(),
                   backoff.count());
      wait_for(backoff);
      continue;
    }
    if (!task) {
      wait_for(config_.poll_interval);
      continue;
    }
    ++leased_;
    const int now_in_flight = ++in_flight_;
    int seen = max_in_flight_.load();
    while (now_in_flight > seen && !max_in_flight_.compare_exchange_weak(seen, now_in_flight)) {
    }
    run_task(*task, slot_id);
    --in_flight_;
  }
}

void Worker::run_task(const TaskAssignment& task, const std::string& slot_id) {
  spdlog::info("{}: running {} {}/{} attempt {}", slot_id, task.job_id, task.plugin_id,
               task.task_name, task.attempt);
  std::atomic<bool> cancel_requested{false};
  std::atomic<bool> lost{false};

  std::mutex log_mu;
  std::string pending;
  std::int64_t offset = task.log_offset;
  const auto sink = [&](std::string_view text) {
    std::lock_guard lock(log_mu);
    pending.append(text);
  };
  // Called only from the heartbeat thread and, after it has joined, from
  // this thread; the lock only guards `pending` against the sink.
  const auto flush = [&]() -> bool {
    std::string chunk;
    {
      std::lock_guard lock(log_mu);
      chunk.swap(pending);
    }
    if (chunk.empty() || lost) return true;
    try {
      backend_.append_log(task.job_id, slot_id, offset, chunk);
      offset += static_cast<std::int64_t>(chunk.size());
      return true;
    } catch (const Error& e) {
      if (lease_lost(e.code())) {
        lost = true;
      } else if (e.code() == ErrorCode::kIo) {
        std::lock_guard lock(log_mu);
        pending.insert(0, chunk);
        return false;
      } else {
        spdlog::warn("{}: dropping log chunk for {}: {}", slot_id, task.job_id, e.what());
      }
      return true;
    }
  };

  std::mutex hb_mu;
  std::condition_variable hb_cv;
  bool done = false;
  const auto lease_ms = std::max<std::int64_t>(task.lease_ms, 3);
  const auto hb_interval = config_.heartbeat_interval.count() > 0
                               ? config_.heartbeat_interval
                               : std::chrono::milliseconds(lease_ms / 3);
  std::thread heartbeat([&] {
    auto last = std::chrono::steady_clock::now();
    std::unique_lock lock(hb_mu);
    while (!done) {
      hb_cv.wait_for(lock, std::min(config_.log_flush_interval, hb_interval));
      if (done) break;
      lock.unlock();
      flush();
      if (std::chrono::steady_clock::now() - last >= hb_interval) {
        try {
          if (backend_.heartbeat(task.job_id, slot_id)) cancel_requested = true;
          last = std::chrono::steady_clock::now();
        } catch (const Error& e) {
          if (lease_lost(e.code())) {
            spdlog::warn("{}: lost lease on {}: {}", slot_id, task.job_id, e.what());
            lost = true;
          } else {
            spdlog::warn("{}: heartbeat failed: {}", slot_id, e.what());
          }
        }
      }
      lock.lock();
    }
  });

  ExecutionOutcome outcome;
  try {
    TaskRequest request;
    request.job_id = task.job_id;
    request.kind = task.kind;
    request.plugin_id = task.plugin_id;
    request.task_name = task.task_name;
    request.params = task.params;
    request.input = backend_.fetch_blob(task.input_ref);
    if (task.model_artifact_ref) request.artifact = backend_.fetch_blob(*task.model_artifact_ref);
    const auto abandon = [this] { return stopping_.load() && !config_.drain_on_stop; };
    outcome = execute_task(
        request, registry_,
        [&] { return cancel_requested.load() || lost.load() || abandon(); }, sink);
  } catch (const Error& e) {
    if (lease_lost(e.code()) && e.code() != ErrorCode::kNotFound) lost = true;
    const std::string line = std::string("error: cannot fetch task inputs: ") + e.what();
    sink(line + "\n");
    outcome.value = ExecutionOutcome::Err{line.substr(7)};
  }

  {
    std::lock_guard lock(hb_mu);
    done = true;
  }
  hb_cv.notify_all();
  heartbeat.join();

  auto retry = [&](auto&& op) -> bool {
    std::chrono::milliseconds delay{200};
    for (int i = 0; i < 8 && !lost; ++i) {
      try {
        op();
        return true;
      } catch (const Error& e) {
        if (lease_lost(e.code())) {
          lost = true;
          return false;
        }
        if (e.code() != ErrorCode::kIo) {
          spdlog::warn("{}: {} rejected: {}", slot_id, task.job_id, e.what());
          return false;
        }
        std::this_thread::sleep_for(delay);
        delay = std::min(delay * 2, config_.max_backoff);
      }
    }
    return false;
  };
  retry([&] {
    if (!flush()) fail(ErrorCode::kIo, "log flush failed");
  });

  const bool stop_abandon =
      outcome.cancelled() && !cancel_requested && stopping_ && !config_.drain_on_stop;
  if (lost || stop_abandon) {
    ++abandoned_;
    spdlog::warn("{}: abandoned {}", slot_id, task.job_id);
    return;
  }
  if (retry([&] { backend_.complete(task.job_id, slot_id, outcome); })) {
    ++completed_;
    spdlog::info("{}: {} finished ({})", slot_id, task.job_id,
                 outcome.ok() ? "ok" : outcome.cancelled() ? "cancelled" : outcome.reason());
  } else {
    ++abandoned_;
  }
}

}  // namespace annolab
