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

#include "annolab/domain.hpp"

#include <array>
#include <regex>
#include <set>
#include <utility>

#include "annolab/error.hpp"

namespace annolab {
namespace {

template <typename E, std::size_t N>
using EnumTable = std::array<std::pair<E, std::string_view>, N>;

constexpr EnumTable<TaskKind, 2> kTaskKinds{{
    {TaskKind::kPredict, "predict"},
    {TaskKind::kTrain, "train"},
}};
constexpr EnumTable<InputKind, 5> kInputKinds{{
    {InputKind::kTextLines, "text_lines"},
    {InputKind::kTextPairs, "text_pairs"},
    {InputKind::kWavAudio, "wav_audio"},
    {InputKind::kEmbeddingWindows, "embedding_windows"},
    {InputKind::kEnrollmentAnnotations, "enrollment_annotations"},
}};
constexpr EnumTable<OutputKind, 3> kOutputKinds{{
    {OutputKind::kTextLines, "text_lines"},
    {OutputKind::kSegments, "segments"},
    {OutputKind::kModelArtifact, "model_artifact"},
}};
constexpr EnumTable<Visibility, 2> kVisibilities{{
    {Visibility::kPrivate, "private"},
    {Visibility::kPublic, "public"},
}};
constexpr EnumTable<ModelStatus, 3> kModelStatuses{{
    {ModelStatus::kReady, "ready"},
    {ModelStatus::kTraining, "training"},
    {ModelStatus::kFailed, "failed"},
}};
constexpr EnumTable<JobStatus, 5> kJobStatuses{{
    {JobStatus::kQueued, "queued"},
    {JobStatus::kRunning, "running"},
    {JobStatus::kSucceeded, "succeeded"},
    {JobStatus::kFailed, "failed"},
    {JobStatus::kCancelled, "cancelled"},
}};
constexpr EnumTable<DatasetFormat, 3> kDatasetFormats{{
    {DatasetFormat::kTextPairsJsonl, "text_pairs_jsonl"},
    {DatasetFormat::kEnrollmentJson, "enrollment_json"},
    {DatasetFormat::kEmbeddingWindowsJson, "embedding_windows_json"},
}};
constexpr EnumTable<Role, 3> kRoles{{
    {Role::kUser, "user"},
    {Role::kAdmin, "admin"},
    {Role::kWorker, "worker"},
}};
constexpr EnumTable<JobEvent, 7> kJobEvents{{
    {JobEvent::kLeaseGranted, "lease_granted"},
    {JobEvent::kCompletedOk, "completed_ok"},
    {JobEvent::kCompletedErr, "completed_err"},
    {JobEvent::kCompletedCancelled, "completed_cancelled"},
    {JobEvent::kLeaseExpired, "lease_expired"},
    {JobEvent::kCancel, "cancel"},
    {JobEvent::kRestart, "restart"},
}};

template <typename E, std::size_t N>
std::string_view lookup_name(const EnumTable<E, N>& table, E value) {
  for (const auto& [v, name] : table) {
    if (v == value) return name;
  }
  return "?";
}

template <typename E, std::size_t N>
E lookup_value(const EnumTable<E, N>& table, std::string_view text,
               std::string_view what) {
  for (const auto& [v, name] : table) {
    if (name == text) return v;
  }
  fail(ErrorCode::kInvalidArgument,
       "unknown " + std::string(what) + " '" + std::string(text) + "'");
}

}  // namespace

std::string_view to_string(TaskKind v) { return lookup_name(kTaskKinds, v); }
std::string_view to_string(InputKind v) { return lookup_name(kInputKinds, v); }
std::string_view to_string(OutputKind v) { return lookup_name(kOutputKinds, v); }
std::string_view to_string(Visibility v) { return lookup_name(kVisibilities, v); }
std::string_view to_string(ModelStatus v) { return lookup_name(kModelStatuses, v); }
std::string_view to_string(JobStatus v) { return lookup_name(kJobStatuses, v); }
std::string_view to_string(DatasetFormat v) { return lookup_name(kDatasetFormats, v); }
std::string_view to_string(Role v) { return lookup_name(kRoles, v); }
std::string_view to_string(JobEvent e) { return lookup_name(kJobEvents, e); }

template <>
TaskKind parse_enum<TaskKind>(std::string_view t) {
  return lookup_value(kTaskKinds, t, "task kind");
}
template <>
InputKind parse_enum<InputKind>(std::string_view t) {
  return lookup_value(kInputKinds, t, "input kind");
}
template <>
OutputKind parse_enum<OutputKind>(std::string_view t) {
  return lookup_value(kOutputKinds, t, "output kind");
}
template <>
Visibility parse_enum<Visibility>(std::string_view t) {
  return lookup_value(kVisibilities, t, "visibility");
}
template <>
ModelStatus parse_enum<ModelStatus>(std::string_view t) {
  return lookup_value(kModelStatuses, t, "model status");
}
template <>
JobStatus parse_enum<JobStatus>(std::string_view t) {
  return lookup_value(kJobStatuses, t, "job status");
}
template <>
DatasetFormat parse_enum<DatasetFormat>(std::string_view t) {
  return lookup_value(kDatasetFormats, t, "dataset format");
}
template <>
Role parse_enum<Role>(std::string_view t) {
  return lookup_value(kRoles, t, "role");
}

bool is_terminal(JobStatus s) {
  return s == JobStatus::kSucceeded || s == JobStatus::kFailed ||
         s == JobStatus::kCancelled;
}

// ---------------------------------------------------------------------------
// Manifests

const TaskSpec* PluginManifest::find_task(std::string_view name) const {
  for (const auto& t : tasks) {
    if (t.task_name == name) return &t;
  }
  return nullptr;
}

const TaskSpec* PluginManifest::train_task() const {
  for (const auto& t : tasks) {
    if (t.kind == TaskKind::kTrain) return &t;
  }
  return nullptr;
}

bool is_valid_plugin_id(std::string_view id) {
  static const std::regex kPattern("[a-z0-9_-]+");
  return std::regex_match(id.begin(), id.end(), kPattern);
}

bool is_valid_http_url(std::string_view url) {
  static const std::regex kPattern(
      R"(https?://[A-Za-z0-9.-]+(:[0-9]{1,5})?(/[^\s]*)?)");
  return std::regex_match(url.begin(), url.end(), kPattern);
}

namespace {

bool is_valid_semver(std::string_view v) {
  static const std::regex kPattern(
      R"((0|[1-9]\d*)\.(0|[1-9]\d*)\.(0|[1-9]\d*)(-[0-9A-Za-z.-]+)?(\+[0-9A-Za-z.-]+)?)");
  return std::regex_match(v.begin(), v.end(), kPattern);
}

// ISO-639-1/3 codes, optionally with a script or region suffix
// ("eng_Latn", "pt-BR").
bool is_valid_language(std::string_view code) {
  if (code == "*") return true;
  static const std::regex kPattern(R"([a-z]{2,3}([_-][A-Za-z0-9]{2,8})*)");
  return std::regex_match(code.begin(), code.end(), kPattern);
}

const Json& require(const Json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    fail(ErrorCode::kInvalidArgument, where + ": missing field '" + key + "'");
  }
  return obj.at(key);
}

std::string require_string(const Json& obj, const char* key,
                           const std::string& where) {
  const Json& v = require(obj, key, where);
  if (!v.is_string()) {
    fail(ErrorCode::kInvalidArgument,
         where + ": field '" + key + "' must be a string");
  }
  return v.get<std::string>();
}

TaskSpec parse_task(const Json& raw, std::size_t index) {
  const std::string where = "tasks[" + std::to_string(index) + "]";
  TaskSpec t;
  t.task_name = require_string(raw, "task_name", where);
  if (t.task_name.empty()) {
    fail(ErrorCode::kInvalidArgument, where + ": empty task_name");
  }
  t.kind = parse_enum<TaskKind>(require_string(raw, "kind", where));
  t.input_kind = parse_enum<InputKind>(require_string(raw, "input_kind", where));
  t.output_kind =
      parse_enum<OutputKind>(require_string(raw, "output_kind", where));
  t.queue_class = require_string(raw, "queue_class", where);
  if (t.queue_class.empty()) {
    fail(ErrorCode::kInvalidArgument, where + ": empty queue_class");
  }
  const Json& ft = require(raw, "supports_finetune", where);
  if (!ft.is_boolean()) {
    fail(ErrorCode::kInvalidArgument,
         where + ": supports_finetune must be a boolean");
  }
  t.supports_finetune = ft.get<bool>();
  const Json& langs = require(raw, "languages", where);
  if (!langs.is_array() || langs.empty()) {
    fail(ErrorCode::kInvalidArgument, where + ": languages must be nonempty");
  }
  for (const auto& l : langs) {
    if (!l.is_string() || !is_valid_language(l.get<std::string>())) {
      fail(ErrorCode::kInvalidArgument,
           where + ": invalid language code " + l.dump());
    }
    t.languages.push_back(l.get<std::string>());
  }
  if (t.kind == TaskKind::kTrain && t.output_kind != OutputKind::kModelArtifact) {
    fail(ErrorCode::kInvalidArgument,
         where + ": train tasks must output model_artifact");
  }
  if (t.kind == TaskKind::kPredict && t.output_kind == OutputKind::kModelArtifact) {
    fail(ErrorCode::kInvalidArgument,
         where + ": predict tasks cannot output model_artifact");
  }
  return t;
}

}  // namespace

PluginManifest validate_manifest(const Json& raw) {
  if (!raw.is_object()) {
    fail(ErrorCode::kInvalidArgument, "manifest must be a JSON object");
  }
  PluginManifest m;
  m.plugin_id = require_string(raw, "plugin_id", "manifest");
  if (!is_valid_plugin_id(m.plugin_id)) {
    fail(ErrorCode::kInvalidArgument,
         "malformed plugin_id '" + m.plugin_id + "'");
  }
  m.version = raw.contains("version") ? require_string(raw, "version", "manifest")
                                      : std::string("0.1.0");
  if (!is_valid_semver(m.version)) {
    fail(ErrorCode::kInvalidArgument, "version '" + m.version + "' is not semver");
  }

  if (raw.contains("execution")) {
    const Json& exec = raw.at("execution");
    std::string mode;
    if (exec.is_string()) {
      mode = exec.get<std::string>();
    } else if (exec.is_object()) {
      mode = require_string(exec, "mode", "execution");
    } else {
      fail(ErrorCode::kInvalidArgument, "execution must be a string or object");
    }
    if (mode == "external") {
      if (!exec.is_object() || !exec.contains("url") || !exec.at("url").is_string()) {
        fail(ErrorCode::kInvalidArgument, "external execution requires a url");
      }
      m.external_url = exec.at("url").get<std::string>();
      if (!is_valid_http_url(m.external_url)) {
        fail(ErrorCode::kInvalidArgument,
             "invalid URL for external execution '" + m.external_url + "'");
      }
    } else if (mode != "in_process") {
      fail(ErrorCode::kInvalidArgument, "unknown execution mode '" + mode + "'");
    }
  }

  const Json& tasks = require(raw, "tasks", "manifest");
  if (!tasks.is_array() || tasks.empty()) {
    fail(ErrorCode::kInvalidArgument, "empty task list");
  }
  std::set<std::string> names;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    TaskSpec t = parse_task(tasks[i], i);
    if (!names.insert(t.task_name).second) {
      fail(ErrorCode::kInvalidArgument, "duplicate task name '" + t.task_name + "'");
    }
    m.tasks.push_back(std::move(t));
  }
  return m;
}

Json manifest_to_json(const PluginManifest& m) {
  Json tasks = Json::array();
  for (const auto& t : m.tasks) {
    tasks.push_back({
        {"task_name", t.task_name},
        {"kind", to_string(t.kind)},
        {"input_kind", to_string(t.input_kind)},
        {"output_kind", to_string(t.output_kind)},
        {"queue_class", t.queue_class},
        {"supports_finetune", t.supports_finetune},
        {"languages", t.languages},
    });
  }
  Json exec = m.is_external()
                  ? Json{{"mode", "external"}, {"url", m.external_url}}
                  : Json{{"mode", "in_process"}};
  return {{"plugin_id", m.plugin_id},
          {"version", m.version},
          {"execution", exec},
          {"tasks", tasks}};
}

// ---------------------------------------------------------------------------
// JSON mapping

namespace {

template <typename T>
void put_optional(Json& j, const char* key, const std::optional<T>& v) {
  j[key] = v ? Json(*v) : Json(nullptr);
}

template <typename T>
std::optional<T> get_optional(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

void to_json(Json& j, const ModelRecord& m) {
  j = Json{{"model_id", m.model_id},
           {"owner", m.owner},
           {"plugin_id", m.plugin_id},
           {"task_name", m.task_name},
           {"dataset_ids", m.dataset_ids},
           {"visibility", to_string(m.visibility)},
           {"status", to_string(m.status)},
           {"created_at", m.created_at}};
  put_optional(j, "parent_model_id", m.parent_model_id);
  put_optional(j, "artifact", m.artifact);
  put_optional(j, "training_job_id", m.training_job_id);
}

void from_json(const Json& j, ModelRecord& m) {
  m.model_id = j.at("model_id").get<std::string>();
  m.owner = j.at("owner").get<std::string>();
  m.plugin_id = j.at("plugin_id").get<std::string>();
  m.task_name = j.at("task_name").get<std::string>();
  m.parent_model_id = get_optional<std::string>(j, "parent_model_id");
  m.dataset_ids = j.value("dataset_ids", std::vector<std::string>{});
  m.visibility = parse_enum<Visibility>(j.at("visibility").get<std::string>());
  m.status = parse_enum<ModelStatus>(j.at("status").get<std::string>());
  m.artifact = get_optional<std::string>(j, "artifact");
  m.training_job_id = get_optional<std::string>(j, "training_job_id");
  m.created_at = j.value("created_at", Timestamp{0});
}

void to_json(Json& j, const Job& job) {
  j = Json{{"job_id", job.job_id},
           {"owner", job.owner},
           {"kind", to_string(job.kind)},
           {"plugin_id", job.plugin_id},
           {"task_name", job.task_name},
           {"queue_class", job.queue_class},
           {"status", to_string(job.status)},
           {"attempt", job.attempt},
           {"max_attempts", job.max_attempts},
           {"cancel_requested", job.cancel_requested},
           {"submitted_at", job.submitted_at},
           {"params", job.params}};
  put_optional(j, "model_id", job.model_id);
  put_optional(j, "dataset_id", job.dataset_id);
  put_optional(j, "result", job.result);
  put_optional(j, "failure_reason", job.failure_reason);
  put_optional(j, "input_ref", job.input_ref);
  put_optional(j, "model_artifact_ref", job.model_artifact_ref);
  if (job.lease) {
    j["lease"] = {{"worker_id", job.lease->worker_id},
                  {"deadline", job.lease->deadline}};
  } else {
    j["lease"] = nullptr;
  }
}

void from_json(const Json& j, Job& job) {
  job.job_id = j.at("job_id").get<std::string>();
  job.owner = j.at("owner").get<std::string>();
  job.kind = parse_enum<TaskKind>(j.at("kind").get<std::string>());
  job.plugin_id = j.at("plugin_id").get<std::string>();
  job.task_name = j.at("task_name").get<std::string>();
  job.queue_class = j.at("queue_class").get<std::string>();
  job.status = parse_enum<JobStatus>(j.at("status").get<std::string>());
  job.attempt = j.at("attempt").get<int>();
  job.max_attempts = j.at("max_attempts").get<int>();
  job.cancel_requested = j.value("cancel_requested", false);
  job.submitted_at = j.at("submitted_at").get<Timestamp>();
  job.params = j.value("params", Json::object());
  job.model_id = get_optional<std::string>(j, "model_id");
  job.dataset_id = get_optional<std::string>(j, "dataset_id");
  job.result = get_optional<std::string>(j, "result");
  job.failure_reason = get_optional<std::string>(j, "failure_reason");
  job.input_ref = get_optional<std::string>(j, "input_ref");
  job.model_artifact_ref = get_optional<std::string>(j, "model_artifact_ref");
  if (j.contains("lease") && !j.at("lease").is_null()) {
    job.lease = Lease{j.at("lease").at("worker_id").get<std::string>(),
                      j.at("lease").at("deadline").get<Timestamp>()};
  } else {
    job.lease.reset();
  }
}

void to_json(Json& j, const Dataset& d) {
  j = Json{{"dataset_id", d.dataset_id},
           {"owner", d.owner},
           {"task_name", d.task_name},
           {"format", to_string(d.format)},
           {"item_count", d.item_count},
           {"blob", d.blob},
           {"created_at", d.created_at}};
}

void from_json(const Json& j, Dataset& d) {
  d.dataset_id = j.at("dataset_id").get<std::string>();
  d.owner = j.at("owner").get<std::string>();
  d.task_name = j.value("task_name", std::string{});
  d.format = parse_enum<DatasetFormat>(j.at("format").get<std::string>());
  d.item_count = j.at("item_count").get<std::int64_t>();
  d.blob = j.at("blob").get<std::string>();
  d.created_at = j.value("created_at", Timestamp{0});
}

void to_json(Json& j, const UserAccount& u) {
  j = Json{{"user_id", u.user_id},
           {"username", u.username},
           {"display_name", u.display_name},
           {"role", to_string(u.role)},
           {"password_hash", u.password_hash}};
}

void from_json(const Json& j, UserAccount& u) {
  u.user_id = j.at("user_id").get<std::string>();
  u.username = j.at("username").get<std::string>();
  u.display_name = j.value("display_name", u.username);
  u.role = parse_enum<Role>(j.at("role").get<std::string>());
  u.password_hash = j.value("password_hash", std::string{});
}

// ---------------------------------------------------------------------------
// State machine

namespace {

[[noreturn]] void reject(const Job& job, JobEvent event) {
  fail(ErrorCode::kInvalidState,
       "cannot apply " + std::string(to_string(event)) + " to " +
           std::string(to_string(job.status)) + " job " + job.job_id);
}

// Shared by completed_err and lease_expired.
Job retry_or_fail(Job next, std::string reason) {
  next.lease.reset();
  if (next.cancel_requested) {
    next.status = JobStatus::kCancelled;
    return next;
  }
  if (next.attempt < next.max_attempts) {
    next.status = JobStatus::kQueued;
    next.attempt += 1;
    next.failure_reason = std::move(reason);
  } else {
    next.status = JobStatus::kFailed;
    next.failure_reason = std::move(reason);
  }
  return next;
}

}  // namespace

Job validate_transition(const Job& job, JobEvent event,
                        const TransitionArgs& args) {
  Job next = job;
  switch (event) {
    case JobEvent::kLeaseGranted:
      if (job.status != JobStatus::kQueued) reject(job, event);
      if (!args.lease) {
        fail(ErrorCode::kInvalidArgument, "lease_granted requires a lease");
      }
      next.status = JobStatus::kRunning;
      next.lease = args.lease;
      return next;

    case JobEvent::kCompletedOk:
      if (job.status != JobStatus::kRunning) reject(job, event);
      next.status = JobStatus::kSucceeded;
      next.lease.reset();
      next.failure_reason.reset();
      return next;

    case JobEvent::kCompletedErr:
      if (job.status != JobStatus::kRunning) reject(job, event);
      return retry_or_fail(std::move(next),
                           args.reason.empty() ? "task failed" : args.reason);

    case JobEvent::kLeaseExpired:
      if (job.status != JobStatus::kRunning) reject(job, event);
      return retry_or_fail(std::move(next), "lease expired");

    case JobEvent::kCompletedCancelled:
      if (job.status != JobStatus::kRunning) reject(job, event);
      next.status = JobStatus::kCancelled;
      next.lease.reset();
      return next;

    case JobEvent::kCancel:
      if (job.status == JobStatus::kQueued) {
        next.status = JobStatus::kCancelled;
        return next;
      }
      if (job.status == JobStatus::kRunning) {
        next.cancel_requested = true;
        return next;
      }
      reject(job, event);

    case JobEvent::kRestart:
      if (job.status != JobStatus::kFailed && job.status != JobStatus::kCancelled) {
        reject(job, event);
      }
      next.status = JobStatus::kQueued;
      next.attempt = 1;
      next.cancel_requested = false;
      next.failure_reason.reset();
      next.result.reset();
      next.lease.reset();
      next.submitted_at = args.now;
      return next;
  }
  reject(job, event);
}

bool job_invariants_hold(const Job& job) {
  if (job.attempt < 1 || job.attempt > job.max_attempts) return false;
  if ((job.status == JobStatus::kRunning) != job.lease.has_value()) return false;
  if (is_terminal(job.status) && job.lease) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Lineage

std::vector<std::string> lineage_chain(const std::string& model_id,
                                       const ModelLookup& lookup) {
  std::vector<std::string> chain;
  std::set<std::string> seen;
  auto current = lookup(model_id);
  if (!current) fail(ErrorCode::kNotFound, "model " + model_id + " not found");
  while (true) {
    if (!seen.insert(current->model_id).second) {
      fail(ErrorCode::kInvalidState,
           "cycle detected in lineage at " + current->model_id);
    }
    chain.push_back(current->model_id);
    if (!current->parent_model_id) return chain;
    const std::string parent = *current->parent_model_id;
    current = lookup(parent);
    if (!current) {
      fail(ErrorCode::kInvalidState,
           "dangling parent reference " + parent + " from " + chain.back());
    }
  }
}

std::vector<std::string> lineage_chain(
    const std::string& model_id,
    const std::map<std::string, ModelRecord>& registry) {
  return lineage_chain(model_id,
                       [&](const std::string& id) -> std::optional<ModelRecord> {
                         auto it = registry.find(id);
                         if (it == registry.end()) return std::nullopt;
                         return it->second;
                       });
}

}  // namespace annolab
