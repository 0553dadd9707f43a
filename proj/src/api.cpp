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


#include "annolab/api.hpp"

#include <algorithm>
#include <regex>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "annolab/auth.hpp"
#include "annolab/error.hpp"

namespace annolab {
namespace {

using httplib::Request;
using httplib::Response;

enum class Auth { kPublic, kUser, kAdmin, kWorker };

std::string_view auth_name(Auth a) {
  switch (a) {
    case Auth::kPublic: return "none";
    case Auth::kUser: return "user";
    case Auth::kAdmin: return "admin";
    case Auth::kWorker: return "worker";
  }
  return "none";
}

void send_json(Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

Json body_json(const Request& req) {
  if (req.body.empty()) fail(ErrorCode::kInvalidArgument, "request body required");
  auto doc = Json::parse(req.body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    fail(ErrorCode::kInvalidArgument, "request body must be a JSON object");
  }
  return doc;
}

template <typename T>
T required(const Json& body, const char* key) {
  if (!body.contains(key) || body.at(key).is_null()) {
    fail(ErrorCode::kInvalidArgument, std::string("missing field '") + key + "'");
  }
  try {
    return body.at(key).get<T>();
  } catch (const Json::exception&) {
    fail(ErrorCode::kInvalidArgument, std::string("field '") + key + "' has the wrong type");
  }
}

template <typename T>
std::optional<T> optional_field(const Json& body, const char* key) {
  if (!body.contains(key) || body.at(key).is_null()) return std::nullopt;
  return required<T>(body, key);
}

std::string new_id(std::string_view prefix) { return std::string(prefix) + random_hex(8); }

bool is_valid_username(const std::string& name) {
  static const std::regex re("^[A-Za-z0-9._-]{1,64}$");
  return std::regex_match(name, re);
}

std::string user_record_id(const std::string& username) { return "u-" + username; }

std::int64_t offset_param(const Request& req) {
  if (!req.has_param("offset")) return 0;
  const auto text = req.get_param_value("offset");
  try {
    std::size_t used = 0;
    const auto v = std::stoll(text, &used);
    if (used == text.size() && v >= 0) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::kInvalidArgument, "offset must be a nonnegative integer");
}

Json model_view(const ModelRecord& m, const Caller& caller) {
  Json j = m;
  if (m.owner != caller.user_id) {
    j.erase("dataset_ids");
    j.erase("training_job_id");
  }
  return j;
}

bool holds_blob(const Json& payload, const std::string& blob_id,
                std::initializer_list<const char*> fields) {
  for (const char* f : fields) {
    if (payload.contains(f) && payload.at(f).is_string() && payload.at(f) == blob_id) return true;
  }
  return false;
}

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return 400;
    case ErrorCode::kUnauthorized: return 401;
    case ErrorCode::kForbidden: return 403;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kInvalidState:
    case ErrorCode::kDuplicate:
    case ErrorCode::kVersionConflict:
    case ErrorCode::kContiguity:
    case ErrorCode::kNotLeaseHolder:
    case ErrorCode::kStaleLease: return 409;
    case ErrorCode::kPayloadTooLarge: return 413;
    case ErrorCode::kExternal: return 502;
    case ErrorCode::kCorrupted:
    case ErrorCode::kIo:
    case ErrorCode::kInternal: return 500;
  }
  return 500;
}

Json error_body(ErrorCode code, const std::string& message) {
  return {{"error", {{"code", to_string(code)}, {"message", message}}}};
}

ApiService::ApiService(Store& store, const Clock& clock, const PluginRegistry& registry,
                       ServiceConfig config)
    : store_(store),
      clock_(clock),
      registry_(registry),
      config_(config),
      queue_(store, config.lease_ms) {
  queue_.set_listener([this](const Job& job) { on_transition(job); });
}

ApiService::~ApiService() { stop_background(); }

// ---------------------------------------------------------------------------
// Accounts

bool ApiService::user_exists(const std::string& username) const {
  return store_.find(EntityKind::kUser, user_record_id(username)).has_value();
}

std::string ApiService::create_user(const std::string& username, const std::string& password,
                                    Role role, const std::string& display_name) {
  if (!is_valid_username(username)) {
    fail(ErrorCode::kInvalidArgument, "username must match [A-Za-z0-9._-]{1,64}");
  }
  if (password.empty()) fail(ErrorCode::kInvalidArgument, "password must not be empty");
  UserAccount user;
  user.user_id = user_record_id(username);
  user.username = username;
  user.display_name = display_name.empty() ? username : display_name;
  user.role = role;
  user.password_hash = hash_password(password, config_.password_iterations);
  try {
    store_.put(EntityKind::kUser, user.user_id, 0, user);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kVersionConflict) {
      fail(ErrorCode::kDuplicate, "username '" + username + "' is taken");
    }
    throw;
  }
  return user.user_id;
}

Json ApiService::issue_token(const std::string& username, const std::string& password) {
  const auto rec = is_valid_username(username)
                       ? store_.find(EntityKind::kUser, user_record_id(username))
                       : std::nullopt;
  if (!rec) fail(ErrorCode::kUnauthorized, "bad credentials");
  const auto user = rec->payload.get<UserAccount>();
  if (!verify_password(password, user.password_hash)) {
    fail(ErrorCode::kUnauthorized, "bad credentials");
  }
  const auto token = new_token();
  store_.put(EntityKind::kToken, sha256_hex(token), 0,
             {{"user_id", user.user_id}, {"created_at", clock_.now()}});
  return {{"token", token}, {"user_id", user.user_id}, {"role", to_string(user.role)}};
}

Caller ApiService::authenticate_token(const std::string& token) const {
  if (token.size() != 64) fail(ErrorCode::kUnauthorized, "invalid token");
  const auto rec = store_.find(EntityKind::kToken, sha256_hex(token));
  if (!rec) fail(ErrorCode::kUnauthorized, "invalid token");
  const auto user_rec =
      store_.find(EntityKind::kUser, rec->payload.at("user_id").get<std::string>());
  if (!user_rec) fail(ErrorCode::kUnauthorized, "invalid token");
  const auto user = user_rec->payload.get<UserAccount>();
  return {user.user_id, user.username, user.role};
}

// ---------------------------------------------------------------------------
// Bootstrap and background work

void ApiService::bootstrap() {
  for (const auto* manifest : registry_.manifests()) {
    for (const auto& task : manifest->tasks) {
      if (task.kind != TaskKind::kPredict) continue;
      ModelRecord m;
      m.model_id = "base-" + manifest->plugin_id + "-" + task.task_name;
      if (store_.find(EntityKind::kModel, m.model_id)) continue;
      m.owner = kSystemOwner;
      m.plugin_id = manifest->plugin_id;
      m.task_name = task.task_name;
      m.visibility = Visibility::kPublic;
      m.status = ModelStatus::kReady;
      m.created_at = clock_.now();
      try {
        store_.put(EntityKind::kModel, m.model_id, 0, m);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kVersionConflict) throw;
      }
    }
  }
  reconcile();
}

void ApiService::reconcile() {
  for (const auto& rec : store_.list({.kind = EntityKind::kModel})) {
    const auto model = rec.payload.get<ModelRecord>();
    if (!model.training_job_id) continue;
    const auto job_rec = store_.find(EntityKind::kJob, *model.training_job_id);
    if (!job_rec) {
      if (model.status == ModelStatus::kTraining) {
        store_.update(EntityKind::kModel, model.model_id,
                      [](Json& m) { m["status"] = to_string(ModelStatus::kFailed); });
      }
      continue;
    }
    on_transition(job_rec->payload.get<Job>());
  }
}

void ApiService::on_transition(const Job& job) {
  if (job.kind != TaskKind::kTrain || !job.model_id) return;
  try {
    store_.update(EntityKind::kModel, *job.model_id, [&](Json& m) {
      switch (job.status) {
        case JobStatus::kSucceeded:
          m["status"] = to_string(ModelStatus::kReady);
          if (job.result) m["artifact"] = *job.result;
          break;
        case JobStatus::kFailed:
        case JobStatus::kCancelled:
          m["status"] = to_string(ModelStatus::kFailed);
          break;
        case JobStatus::kQueued:
        case JobStatus::kRunning:
          m["status"] = to_string(ModelStatus::kTraining);
          break;
      }
    });
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNotFound) {
      spdlog::error("model update for job {} failed: {}", job.job_id, e.what());
    }
  }
}

void ApiService::start_background() {
  std::lock_guard lock(bg_mu_);
  if (bg_thread_.joinable()) return;
  bg_stop_ = false;
  bg_thread_ = std::thread([this] {
    std::unique_lock lock(bg_mu_);
    while (!bg_stop_) {
      bg_cv_.wait_for(lock, config_.expire_interval);
      if (bg_stop_) break;
      lock.unlock();
      try {
        for (const auto& id : queue_.expire_leases(clock_.now())) {
          spdlog::warn("lease on {} expired", id);
        }
      } catch (const std::exception& e) {
        spdlog::error("lease expiry failed: {}", e.what());
      }
      lock.lock();
    }
  });
}

void ApiService::stop_background() {
  {
    std::lock_guard lock(bg_mu_);
    bg_stop_ = true;
  }
  bg_cv_.notify_all();
  if (bg_thread_.joinable()) bg_thread_.join();
}

bool ApiService::blob_referenced(const std::string& blob_id) const {
  for (const auto& rec : store_.list({.kind = EntityKind::kDataset})) {
    if (holds_blob(rec.payload, blob_id, {"blob"})) return true;
  }
  for (const auto& rec : store_.list({.kind = EntityKind::kModel})) {
    if (holds_blob(rec.payload, blob_id, {"artifact"})) return true;
  }
  for (const auto& rec : store_.list({.kind = EntityKind::kJob})) {
    if (holds_blob(rec.payload, blob_id, {"input_ref", "result", "model_artifact_ref"})) {
      return true;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Worker protocol

std::optional<TaskAssignment> ApiService::worker_lease(const std::vector<std::string>& classes,
                                                       const std::string& worker_id) {
  if (classes.empty()) fail(ErrorCode::kInvalidArgument, "queue_classes must not be empty");
  if (worker_id.empty()) fail(ErrorCode::kInvalidArgument, "worker_id must not be empty");
  auto job = queue_.lease_any(classes, worker_id, clock_.now());
  if (!job) return std::nullopt;
  TaskAssignment t;
  t.job_id = job->job_id;
  t.kind = job->kind;
  t.plugin_id = job->plugin_id;
  t.task_name = job->task_name;
  t.model_artifact_ref = job->model_artifact_ref;
  t.input_ref = job->input_ref.value_or("");
  t.params = job->params;
  t.attempt = job->attempt;
  t.log_offset = store_.log_length(job->job_id);
  t.lease_ms = queue_.lease_duration();
  return t;
}

HeartbeatReply ApiService::worker_heartbeat(const std::string& job_id,
                                            const std::string& worker_id) {
  return queue_.heartbeat(job_id, worker_id, clock_.now());
}

std::int64_t ApiService::worker_append_log(const std::string& job_id,
                                           const std::string& worker_id, std::int64_t offset,
                                           std::string_view payload) {
  const auto job = queue_.find(job_id);
  if (!job) fail(ErrorCode::kNotFound, "job " + job_id + " not found");
  if (job->status != JobStatus::kRunning || !job->lease ||
      (!worker_id.empty() && job->lease->worker_id != worker_id)) {
    fail(ErrorCode::kNotLeaseHolder, "job " + job_id + " is not leased by " +
                                         (worker_id.empty() ? "anyone" : worker_id));
  }
  store_.append_log(job_id, offset, payload);
  return offset + static_cast<std::int64_t>(payload.size());
}

Job ApiService::worker_complete(const std::string& job_id, const std::string& worker_id,
                                const ExecutionOutcome& outcome) {
  if (outcome.ok()) {
    const auto blob = store_.blob_put(outcome.result());
    try {
      return queue_.complete(job_id, worker_id, outcome::Ok{blob.blob_id}, clock_.now());
    } catch (const Error&) {
      if (!blob_referenced(blob.blob_id)) store_.blob_delete(blob.blob_id);
      throw;
    }
  }
  if (outcome.cancelled()) {
    return queue_.complete(job_id, worker_id, outcome::Cancelled{}, clock_.now());
  }
  return queue_.complete(job_id, worker_id, outcome::Err{outcome.reason()}, clock_.now());
}

Bytes ApiService::worker_blob(const std::string& blob_id) const {
  return store_.blob_get(blob_id);
}

// ---------------------------------------------------------------------------
// Routes

Json ApiService::route_table() const {
  Json out = Json::array();
  for (const auto& r : routes_) {
    out.push_back({{"method", r.method}, {"path", r.path}, {"auth", r.auth}});
  }
  return out;
}

void ApiService::install(httplib::Server& server) {
  using Handler = std::function<void(const Request&, Response&, const Caller&)>;

  server.set_payload_max_length(config_.max_body_bytes);
  server.set_error_handler([](const Request&, Response& res) {
    if (!res.body.empty()) return;
    ErrorCode code = ErrorCode::kInternal;
    std::string message = "request failed";
    if (res.status == 413) {
      code = ErrorCode::kPayloadTooLarge;
      message = "request body exceeds the size limit";
    } else if (res.status == 404) {
      code = ErrorCode::kNotFound;
      message = "no such route";
    } else if (res.status == 400) {
      code = ErrorCode::kInvalidArgument;
      message = "malformed request";
    }
    res.set_content(error_body(code, message).dump(), "application/json");
  });

  auto authenticate = [this](const Request& req) {
    const auto header = req.get_header_value("Authorization");
    constexpr std::string_view kBearer = "Bearer ";
    if (header.size() <= kBearer.size() || header.compare(0, kBearer.size(), kBearer) != 0) {
      fail(ErrorCode::kUnauthorized, "missing bearer token");
    }
    return authenticate_token(header.substr(kBearer.size()));
  };

  auto add = [&](const char* method, const std::string& path, Auth auth, Handler h) {
    routes_.push_back({method, path, std::string(auth_name(auth))});
    auto wrapped = [authenticate, auth, h = std::move(h)](const Request& req, Response& res) {
      try {
        Caller caller;
        if (auth != Auth::kPublic) {
          caller = authenticate(req);
          if (auth == Auth::kWorker && caller.role != Role::kWorker) {
            fail(ErrorCode::kUnauthorized, "worker token required");
          }
          if (auth != Auth::kWorker && caller.role == Role::kWorker) {
            fail(ErrorCode::kForbidden, "worker tokens may only use the worker protocol");
          }
          if (auth == Auth::kAdmin && caller.role != Role::kAdmin) {
            fail(ErrorCode::kForbidden, "admin role required");
          }
        }
        h(req, res, caller);
      } catch (const Error& e) {
        send_json(res, http_status(e.code()), error_body(e.code(), e.what()));
      } catch (const Json::exception& e) {
        send_json(res, 400, error_body(ErrorCode::kInvalidArgument, e.what()));
      } catch (const std::exception& e) {
        spdlog::error("{} {}: {}", req.method, req.path, e.what());
        send_json(res, 500, error_body(ErrorCode::kInternal, e.what()));
      }
    };
    const std::string m = method;
    if (m == "GET") {
      server.Get(path, wrapped);
    } else if (m == "POST") {
      server.Post(path, wrapped);
    } else if (m == "PATCH") {
      server.Patch(path, wrapped);
    } else if (m == "DELETE") {
      server.Delete(path, wrapped);
    }
  };

  auto visible_model = [this](const std::string& id, const Caller& caller) {
    const auto rec = store_.find(EntityKind::kModel, id);
    if (!rec) fail(ErrorCode::kNotFound, "model " + id + " not found");
    auto model = rec->payload.get<ModelRecord>();
    if (model.owner != caller.user_id && model.visibility != Visibility::kPublic) {
      fail(ErrorCode::kNotFound, "model " + id + " not found");
    }
    return model;
  };
  auto owned_model = [visible_model](const std::string& id, const Caller& caller) {
    auto model = visible_model(id, caller);
    if (model.owner != caller.user_id) {
      fail(ErrorCode::kForbidden, "only the owner may modify model " + id);
    }
    return model;
  };
  auto owned_dataset = [this](const std::string& id, const Caller& caller) {
    const auto rec = store_.find(EntityKind::kDataset, id);
    if (!rec || rec->payload.value("owner", std::string{}) != caller.user_id) {
      fail(ErrorCode::kNotFound, "dataset " + id + " not found");
    }
    return rec->payload.get<Dataset>();
  };
  auto owned_job = [this](const std::string& id, const Caller& caller) {
    const auto rec = store_.find(EntityKind::kJob, id);
    if (!rec || rec->payload.value("owner", std::string{}) != caller.user_id) {
      fail(ErrorCode::kNotFound, "job " + id + " not found");
    }
    return rec->payload.get<Job>();
  };
  auto task_of = [this](const ModelRecord& model) {
    const auto* manifest = registry_.manifest(model.plugin_id);
    if (!manifest) fail(ErrorCode::kInvalidState, "plugin " + model.plugin_id + " is not available");
    const auto* task = manifest->find_task(model.task_name);
    if (!task || task->kind != TaskKind::kPredict) {
      fail(ErrorCode::kInvalidState, "plugin " + model.plugin_id + " has no predict task " +
                                         model.task_name);
    }
    return std::make_pair(manifest, task);
  };

  // --- meta, auth, users ----------------------------------------------------

  add("GET", "/api/meta", Auth::kPublic, [this](const Request&, Response& res, const Caller&) {
    Json codes = Json::array();
    for (int i = 0; i <= static_cast<int>(ErrorCode::kInternal); ++i) {
      const auto code = static_cast<ErrorCode>(i);
      codes.push_back({{"code", to_string(code)}, {"status", http_status(code)}});
    }
    send_json(res, 200,
              {{"service", "annolab"},
               {"api_version", 1},
               {"lease_ms", queue_.lease_duration()},
               {"max_body_bytes", config_.max_body_bytes},
               {"routes", route_table()},
               {"error_codes", codes}});
  });

  add("POST", "/api/auth/token", Auth::kPublic,
      [this](const Request& req, Response& res, const Caller&) {
        const auto body = body_json(req);
        send_json(res, 200,
                  issue_token(required<std::string>(body, "username"),
                              required<std::string>(body, "password")));
      });

  add("GET", "/api/me", Auth::kUser, [this](const Request&, Response& res, const Caller& c) {
    const auto user = store_.get(EntityKind::kUser, c.user_id).payload.get<UserAccount>();
    send_json(res, 200,
              {{"user_id", user.user_id},
               {"username", user.username},
               {"display_name", user.display_name},
               {"role", to_string(user.role)}});
  });

  add("POST", "/api/users", Auth::kAdmin, [this](const Request& req, Response& res, const Caller&) {
    const auto body = body_json(req);
    const auto role =
        parse_enum<Role>(optional_field<std::string>(body, "role").value_or("user"));
    const auto username = required<std::string>(body, "username");
    const auto id = create_user(username, required<std::string>(body, "password"), role,
                                optional_field<std::string>(body, "display_name").value_or(""));
    send_json(res, 201, {{"user_id", id}, {"username", username}, {"role", to_string(role)}});
  });

  add("GET", "/api/plugins", Auth::kUser, [this](const Request&, Response& res, const Caller&) {
    Json list = Json::array();
    for (const auto* m : registry_.manifests()) list.push_back(manifest_to_json(*m));
    send_json(res, 200, {{"plugins", list}});
  });

  // --- models ---------------------------------------------------------------

  add("GET", "/api/models", Auth::kUser, [this](const Request&, Response& res, const Caller& c) {
    std::map<std::string, ModelRecord> seen;
    for (const auto& rec : store_.list({.kind = EntityKind::kModel, .owner = c.user_id})) {
      seen.emplace(rec.id, rec.payload.get<ModelRecord>());
    }
    for (const auto& rec :
         store_.list({.kind = EntityKind::kModel, .visibility = Visibility::kPublic})) {
      seen.emplace(rec.id, rec.payload.get<ModelRecord>());
    }
    std::vector<const ModelRecord*> ordered;
    for (const auto& [id, m] : seen) ordered.push_back(&m);
    std::stable_sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) {
      return a->created_at < b->created_at;
    });
    Json list = Json::array();
    for (const auto* m : ordered) list.push_back(model_view(*m, c));
    send_json(res, 200, {{"models", list}});
  });

  add("GET", "/api/models/:id", Auth::kUser,
      [visible_model](const Request& req, Response& res, const Caller& c) {
        send_json(res, 200, model_view(visible_model(req.path_params.at("id"), c), c));
      });

  add("GET", "/api/models/:id/lineage", Auth::kUser,
      [this, visible_model](const Request& req, Response& res, const Caller& c) {
        const auto start = visible_model(req.path_params.at("id"), c);
        Json chain = Json::array({start.model_id});
        std::set<std::string> seen{start.model_id};
        auto parent = start.parent_model_id;
        Json missing = nullptr;
        while (parent) {
          if (!seen.insert(*parent).second) {
            fail(ErrorCode::kInvalidState, "lineage cycle at " + *parent);
          }
          const auto rec = store_.find(EntityKind::kModel, *parent);
          if (!rec) {
            missing = *parent;
            break;
          }
          chain.push_back(*parent);
          parent = rec->payload.get<ModelRecord>().parent_model_id;
        }
        send_json(res, 200,
                  {{"lineage", chain}, {"complete", missing.is_null()}, {"missing_parent", missing}});
      });

  add("PATCH", "/api/models/:id", Auth::kUser,
      [this, owned_model](const Request& req, Response& res, const Caller& c) {
        const auto body = body_json(req);
        const auto vis = parse_enum<Visibility>(required<std::string>(body, "visibility"));
        const auto model = owned_model(req.path_params.at("id"), c);
        const auto rec = store_.update(EntityKind::kModel, model.model_id,
                                       [&](Json& m) { m["visibility"] = to_string(vis); });
        send_json(res, 200, model_view(rec.payload.get<ModelRecord>(), c));
      });

  add("DELETE", "/api/models/:id", Auth::kUser,
      [this, owned_model](const Request& req, Response& res, const Caller& c) {
        const auto model = owned_model(req.path_params.at("id"), c);
        for (const auto& rec : store_.list({.kind = EntityKind::kJob, .owner = c.user_id})) {
          if (rec.payload.value("model_id", Json()) == Json(model.model_id)) {
            queue_.forget(rec.id);
          }
        }
        if (model.training_job_id) queue_.forget(*model.training_job_id);
        const auto deleted = store_.purge_model_cascade(model.model_id);
        spdlog::info("purged model {} ({} item(s))", model.model_id, deleted.size());
        send_json(res, 200, {{"deleted", deleted}});
      });

  add("POST", "/api/models/:id/predict", Auth::kUser,
      [this, visible_model, owned_dataset, task_of](const Request& req, Response& res,
                                                    const Caller& c) {
        const auto body = body_json(req);
        const auto model = visible_model(req.path_params.at("id"), c);
        if (model.status != ModelStatus::kReady) {
          fail(ErrorCode::kInvalidState,
               "model " + model.model_id + " is " + std::string(to_string(model.status)));
        }
        const auto [manifest, task] = task_of(model);
        std::string blob_id;
        if (const auto text = optional_field<std::string>(body, "inline_input")) {
          blob_id = store_.blob_put(*text).blob_id;
        } else if (const auto b64 = optional_field<std::string>(body, "input_b64")) {
          blob_id = store_.blob_put(base64_decode(*b64)).blob_id;
        } else if (const auto ref = optional_field<std::string>(body, "input_ref")) {
          blob_id = owned_dataset(*ref, c).blob;
        } else {
          fail(ErrorCode::kInvalidArgument, "one of inline_input, input_b64, input_ref required");
        }
        Job job;
        job.job_id = new_id("j-");
        job.owner = c.user_id;
        job.kind = TaskKind::kPredict;
        job.plugin_id = model.plugin_id;
        job.task_name = model.task_name;
        job.model_id = model.model_id;
        job.queue_class = task->queue_class;
        job.submitted_at = clock_.now();
        job.input_ref = blob_id;
        job.model_artifact_ref = model.artifact;
        job.params = body.value("params", Json::object());
        queue_.enqueue(job);
        send_json(res, 202, {{"job_id", job.job_id}, {"status", "queued"}});
      });

  add("POST", "/api/models/:id/finetune", Auth::kUser,
      [this, visible_model, owned_dataset, task_of](const Request& req, Response& res,
                                                    const Caller& c) {
        const auto body = body_json(req);
        const auto parent = visible_model(req.path_params.at("id"), c);
        const auto dataset = owned_dataset(required<std::string>(body, "dataset_id"), c);
        if (parent.status != ModelStatus::kReady) {
          fail(ErrorCode::kInvalidState,
               "model " + parent.model_id + " is " + std::string(to_string(parent.status)));
        }
        const auto [manifest, task] = task_of(parent);
        if (!task->supports_finetune) {
          fail(ErrorCode::kInvalidArgument,
               "task " + parent.plugin_id + "/" + parent.task_name + " does not support fine-tuning");
        }
        const auto expected = finetune_format(*manifest);
        if (dataset.format != expected) {
          fail(ErrorCode::kInvalidArgument,
               "dataset format " + std::string(to_string(dataset.format)) + " does not match " +
                   std::string(to_string(expected)));
        }
        const auto* train = manifest->train_task();

        ModelRecord child;
        child.model_id = new_id("m-");
        child.owner = c.user_id;
        child.plugin_id = parent.plugin_id;
        child.task_name = parent.task_name;
        child.parent_model_id = parent.model_id;
        if (parent.owner == c.user_id) child.dataset_ids = parent.dataset_ids;
        if (std::find(child.dataset_ids.begin(), child.dataset_ids.end(), dataset.dataset_id) ==
            child.dataset_ids.end()) {
          child.dataset_ids.push_back(dataset.dataset_id);
        }
        child.status = ModelStatus::kTraining;
        child.created_at = clock_.now();

        Job job;
        job.job_id = new_id("j-");
        job.owner = c.user_id;
        job.kind = TaskKind::kTrain;
        job.plugin_id = parent.plugin_id;
        job.task_name = parent.task_name;
        job.model_id = child.model_id;
        job.dataset_id = dataset.dataset_id;
        job.queue_class = train ? train->queue_class : task->queue_class;
        job.submitted_at = child.created_at;
        job.input_ref = dataset.blob;
        job.model_artifact_ref = parent.artifact;
        job.params = body.value("params", Json::object());
        child.training_job_id = job.job_id;

        store_.put(EntityKind::kModel, child.model_id, 0, child);
        queue_.enqueue(job);
        send_json(res, 202, {{"job_id", job.job_id}, {"new_model_id", child.model_id}});
      });

  // --- datasets -------------------------------------------------------------

  add("POST", "/api/datasets", Auth::kUser, [this](const Request& req, Response& res,
                                                   const Caller& c) {
    std::string format_name;
    std::string task_name;
    Bytes content;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("file")) fail(ErrorCode::kInvalidArgument, "multipart field 'file' required");
      content = req.get_file_value("file").content;
      if (req.has_file("format")) format_name = req.get_file_value("format").content;
      if (req.has_file("task_name")) task_name = req.get_file_value("task_name").content;
    } else if (req.get_header_value("Content-Type").rfind("application/json", 0) == 0) {
      const auto body = body_json(req);
      format_name = required<std::string>(body, "format");
      task_name = optional_field<std::string>(body, "task_name").value_or("");
      if (const auto b64 = optional_field<std::string>(body, "content_b64")) {
        content = base64_decode(*b64);
      } else {
        content = required<std::string>(body, "content");
      }
    } else {
      content = req.body;
    }
    if (format_name.empty()) format_name = req.get_param_value("format");
    if (task_name.empty()) task_name = req.get_param_value("task_name");
    if (format_name.empty()) fail(ErrorCode::kInvalidArgument, "dataset format required");

    Dataset d;
    d.format = parse_enum<DatasetFormat>(format_name);
    d.item_count = validate_dataset(d.format, content);
    d.dataset_id = new_id("d-");
    d.owner = c.user_id;
    d.task_name = task_name;
    d.blob = store_.blob_put(content).blob_id;
    d.created_at = clock_.now();
    store_.put(EntityKind::kDataset, d.dataset_id, 0, d);
    send_json(res, 201, d);
  });

  add("GET", "/api/datasets", Auth::kUser, [this](const Request&, Response& res, const Caller& c) {
    Json list = Json::array();
    for (const auto& rec : store_.list({.kind = EntityKind::kDataset, .owner = c.user_id})) {
      list.push_back(rec.payload);
    }
    send_json(res, 200, {{"datasets", list}});
  });

  add("GET", "/api/datasets/:id", Auth::kUser,
      [owned_dataset](const Request& req, Response& res, const Caller& c) {
        send_json(res, 200, owned_dataset(req.path_params.at("id"), c));
      });

  add("DELETE", "/api/datasets/:id", Auth::kUser,
      [this, owned_dataset](const Request& req, Response& res, const Caller& c) {
        const auto d = owned_dataset(req.path_params.at("id"), c);
        for (const auto& rec : store_.list({.kind = EntityKind::kModel})) {
          const auto ids = rec.payload.value("dataset_ids", std::vector<std::string>{});
          if (std::find(ids.begin(), ids.end(), d.dataset_id) != ids.end()) {
            fail(ErrorCode::kInvalidState, "dataset " + d.dataset_id + " is used by model " +
                                               rec.id + "; delete the model instead");
          }
        }
        store_.remove(EntityKind::kDataset, d.dataset_id);
        Json deleted = Json::array({d.dataset_id});
        if (!blob_referenced(d.blob)) {
          store_.blob_delete(d.blob);
          deleted.push_back("blob:" + d.blob);
        }
        send_json(res, 200, {{"deleted", deleted}});
      });

  // --- jobs -----------------------------------------------------------------

  add("GET", "/api/jobs", Auth::kUser, [this](const Request& req, Response& res, const Caller& c) {
    std::optional<JobStatus> status;
    if (req.has_param("status")) status = parse_enum<JobStatus>(req.get_param_value("status"));
    std::vector<Job> jobs;
    for (const auto& rec : store_.list({.kind = EntityKind::kJob, .owner = c.user_id})) {
      auto job = rec.payload.get<Job>();
      if (!status || job.status == *status) jobs.push_back(std::move(job));
    }
    std::sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) {
      return std::tie(a.submitted_at, a.job_id) < std::tie(b.submitted_at, b.job_id);
    });
    send_json(res, 200, {{"jobs", jobs}});
  });

  add("GET", "/api/jobs/:id", Auth::kUser,
      [owned_job](const Request& req, Response& res, const Caller& c) {
        send_json(res, 200, owned_job(req.path_params.at("id"), c));
      });

  add("GET", "/api/jobs/:id/logs", Auth::kUser,
      [this, owned_job](const Request& req, Response& res, const Caller& c) {
        const auto job = owned_job(req.path_params.at("id"), c);
        const auto read = store_.read_log(job.job_id, offset_param(req));
        send_json(res, 200,
                  {{"payload_b64", base64_encode(read.payload)},
                   {"next_offset", read.next_offset},
                   {"finished", read.finished}});
      });

  add("POST", "/api/jobs/:id/cancel", Auth::kUser,
      [this, owned_job](const Request& req, Response& res, const Caller& c) {
        const auto job = owned_job(req.path_params.at("id"), c);
        send_json(res, 200, queue_.cancel(job.job_id));
      });

  add("POST", "/api/jobs/:id/restart", Auth::kUser,
      [this, owned_job](const Request& req, Response& res, const Caller& c) {
        const auto job = owned_job(req.path_params.at("id"), c);
        send_json(res, 200, queue_.restart(job.job_id, clock_.now()));
      });

  add("GET", "/api/jobs/:id/result", Auth::kUser,
      [this, owned_job](const Request& req, Response& res, const Caller& c) {
        const auto job = owned_job(req.path_params.at("id"), c);
        if (job.status != JobStatus::kSucceeded || !job.result) {
          fail(ErrorCode::kInvalidState, "job " + job.job_id + " has no result (status " +
                                             std::string(to_string(job.status)) + ")");
        }
        res.status = 200;
        res.set_content(store_.blob_get(*job.result), "application/octet-stream");
      });

  // --- worker protocol ------------------------------------------------------

  add("POST", "/api/worker/lease", Auth::kWorker,
      [this](const Request& req, Response& res, const Caller&) {
        const auto body = body_json(req);
        const auto task = worker_lease(required<std::vector<std::string>>(body, "queue_classes"),
                                       required<std::string>(body, "worker_id"));
        if (!task) {
          res.status = 204;
          return;
        }
        send_json(res, 200, task->to_json());
      });

  add("POST", "/api/worker/heartbeat", Auth::kWorker,
      [this](const Request& req, Response& res, const Caller&) {
        const auto body = body_json(req);
        const auto reply = worker_heartbeat(required<std::string>(body, "job_id"),
                                            required<std::string>(body, "worker_id"));
        send_json(res, 200,
                  {{"cancel_requested", reply.cancel_requested}, {"deadline", reply.deadline}});
      });

  add("POST", "/api/worker/logs", Auth::kWorker,
      [this](const Request& req, Response& res, const Caller&) {
        const auto body = body_json(req);
        const auto next = worker_append_log(
            required<std::string>(body, "job_id"),
            optional_field<std::string>(body, "worker_id").value_or(""),
            required<std::int64_t>(body, "offset"),
            base64_decode(required<std::string>(body, "payload_b64")));
        send_json(res, 200, {{"next_offset", next}});
      });

  add("POST", "/api/worker/complete", Auth::kWorker,
      [this](const Request& req, Response& res, const Caller&) {
        const auto body = body_json(req);
        const auto kind = required<std::string>(body, "outcome");
        ExecutionOutcome outcome;
        if (kind == "ok") {
          outcome.value = ExecutionOutcome::Ok{
              base64_decode(optional_field<std::string>(body, "result_b64").value_or(""))};
        } else if (kind == "err") {
          outcome.value = ExecutionOutcome::Err{
              optional_field<std::string>(body, "reason").value_or("unspecified error")};
        } else if (kind == "cancelled") {
          outcome.value = ExecutionOutcome::Cancelled{};
        } else {
          fail(ErrorCode::kInvalidArgument, "outcome must be ok, err or cancelled");
        }
        const auto job = worker_complete(required<std::string>(body, "job_id"),
                                         required<std::string>(body, "worker_id"), outcome);
        send_json(res, 200, {{"job_id", job.job_id},
                             {"status", to_string(job.status)},
                             {"attempt", job.attempt}});
      });

  add("GET", "/api/worker/blobs/:id", Auth::kWorker,
      [this](const Request& req, Response& res, const Caller&) {
        res.status = 200;
        res.set_content(worker_blob(req.path_params.at("id")), "application/octet-stream");
      });
}

// ---------------------------------------------------------------------------
// HttpFrontend

HttpFrontend::HttpFrontend(ApiService& service, std::optional<std::string> static_dir)
    : server_(std::make_unique<httplib::Server>()) {
  // httplib's default also sets SO_REUSEPORT, which lets a second server
  // share the port silently.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  service.install(*server_);
  if (static_dir && !server_->set_mount_point("/", *static_dir)) {
    fail(ErrorCode::kIo, "cannot serve static files from " + *static_dir);
  }
}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
    if (port_ < 0) fail(ErrorCode::kIo, "cannot bind " + host);
  } else {
    if (!server_->bind_to_port(host, port)) {
      fail(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port) +
                               " (address in use?)");
    }
    port_ = port;
  }
  return port_;
}

void HttpFrontend::start() {
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void HttpFrontend::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace annolab
