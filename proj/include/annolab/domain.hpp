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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "annolab/clock.hpp"

namespace annolab {

using Json = nlohmann::json;

enum class TaskKind { kPredict, kTrain };
enum class InputKind {
  kTextLines,
  kTextPairs,
  kWavAudio,
  kEmbeddingWindows,
  kEnrollmentAnnotations,
};
enum class OutputKind { kTextLines, kSegments, kModelArtifact };
enum class Visibility { kPrivate, kPublic };
enum class ModelStatus { kReady, kTraining, kFailed };
enum class JobStatus { kQueued, kRunning, kSucceeded, kFailed, kCancelled };
enum class DatasetFormat { kTextPairsJsonl, kEnrollmentJson, kEmbeddingWindowsJson };
enum class Role { kUser, kAdmin, kWorker };

std::string_view to_string(TaskKind v);
std::string_view to_string(InputKind v);
std::string_view to_string(OutputKind v);
std::string_view to_string(Visibility v);
std::string_view to_string(ModelStatus v);
std::string_view to_string(JobStatus v);
std::string_view to_string(DatasetFormat v);
std::string_view to_string(Role v);

/// Parsers throw Error(kInvalidArgument) naming the offending value.
template <typename E>
E parse_enum(std::string_view text);

bool is_terminal(JobStatus s);

// ---------------------------------------------------------------------------
// Plugin manifests

struct TaskSpec {
  std::string task_name;
  TaskKind kind = TaskKind::kPredict;
  InputKind input_kind = InputKind::kTextLines;
  OutputKind output_kind = OutputKind::kTextLines;
  std::string queue_class;
  bool supports_finetune = false;
  std::vector<std::string> languages;
};

struct PluginManifest {
  std::string plugin_id;
  std::string version;
  /// Empty for in-process execution, else the absolute http(s) URL requests
  /// are forwarded to.
  std::string external_url;
  std::vector<TaskSpec> tasks;

  bool is_external() const { return !external_url.empty(); }
  const TaskSpec* find_task(std::string_view name) const;
  /// First train-kind task, if the plugin declares one.
  const TaskSpec* train_task() const;
};

/// Validates a parsed `plugin.manifest.json` document. Throws
/// Error(kInvalidArgument) naming the first violated rule.
PluginManifest validate_manifest(const Json& raw);
Json manifest_to_json(const PluginManifest& m);

bool is_valid_plugin_id(std::string_view id);
bool is_valid_http_url(std::string_view url);

// ---------------------------------------------------------------------------
// Records

struct ModelRecord {
  std::string model_id;
  std::string owner;
  std::string plugin_id;
  std::string task_name;
  std::optional<std::string> parent_model_id;
  std::vector<std::string> dataset_ids;
  Visibility visibility = Visibility::kPrivate;
  ModelStatus status = ModelStatus::kReady;
  std::optional<std::string> artifact;
  std::optional<std::string> training_job_id;
  Timestamp created_at = 0;
};

struct Lease {
  std::string worker_id;
  Timestamp deadline = 0;
};

struct Job {
  std::string job_id;
  std::string owner;
  TaskKind kind = TaskKind::kPredict;
  std::string plugin_id;
  std::string task_name;
  std::optional<std::string> model_id;
  std::optional<std::string> dataset_id;
  std::string queue_class;
  JobStatus status = JobStatus::kQueued;
  int attempt = 1;
  int max_attempts = 3;
  bool cancel_requested = false;
  Timestamp submitted_at = 0;
  std::optional<Lease> lease;
  std::optional<std::string> result;
  std::optional<std::string> failure_reason;
  /// Blob holding the task input and the model artifact it runs against.
  std::optional<std::string> input_ref;
  std::optional<std::string> model_artifact_ref;
  Json params = Json::object();
};

struct Dataset {
  std::string dataset_id;
  std::string owner;
  std::string task_name;
  DatasetFormat format = DatasetFormat::kTextPairsJsonl;
  std::int64_t item_count = 0;
  std::string blob;
  Timestamp created_at = 0;
};

struct UserAccount {
  std::string user_id;
  std::string username;
  std::string display_name;
  Role role = Role::kUser;
  std::string password_hash;
};

struct LogChunk {
  std::string job_id;
  std::int64_t offset = 0;
  std::string payload;
};

void to_json(Json& j, const ModelRecord& m);
void from_json(const Json& j, ModelRecord& m);
void to_json(Json& j, const Job& job);
void from_json(const Json& j, Job& job);
void to_json(Json& j, const Dataset& d);
void from_json(const Json& j, Dataset& d);
void to_json(Json& j, const UserAccount& u);
void from_json(const Json& j, UserAccount& u);

// ---------------------------------------------------------------------------
// Job state machine

enum class JobEvent {
  kLeaseGranted,
  kCompletedOk,
  kCompletedErr,
  kCompletedCancelled,
  kLeaseExpired,
  kCancel,
  kRestart,
};

std::string_view to_string(JobEvent e);

struct TransitionArgs {
  /// Required for kLeaseGranted.
  std::optional<Lease> lease;
  /// Failure reason carried by kCompletedErr.
  std::string reason;
  /// Server time; kRestart uses it as the new queue position.
  Timestamp now = 0;
};

/// Applies `event` to `job` and returns the successor, or throws
/// Error(kInvalidState) naming the current status and event.
///
///   queued    + lease_granted       -> running (lease attached)
///   running   + completed_ok        -> succeeded
///   running   + completed_err       -> queued, attempt+1   (attempt < max)
///                                      failed              (otherwise)
///   running   + lease_expired       -> as completed_err, reason "lease expired"
///   running   + completed_cancelled -> cancelled
///   queued    + cancel              -> cancelled
///   running   + cancel              -> running, cancel_requested = true
///   failed|cancelled + restart      -> queued, attempt = 1
///
/// A running job with cancel_requested set that errors or loses its lease is
/// cancelled rather than retried.
Job validate_transition(const Job& job, JobEvent event,
                        const TransitionArgs& args = {});

/// Checks the structural invariants: lease present iff running, attempt in
/// [1, max_attempts], terminal jobs carry no lease.
bool job_invariants_hold(const Job& job);

// ---------------------------------------------------------------------------
// Lineage

using ModelLookup =
    std::function<std::optional<ModelRecord>(const std::string& model_id)>;

/// Walks parent pointers from `model_id` to its base model. Throws
/// kNotFound for an unknown start id, kInvalidState for a dangling parent or
/// a cycle.
std::vector<std::string> lineage_chain(const std::string& model_id,
                                       const ModelLookup& lookup);
std::vector<std::string> lineage_chain(
    const std::string& model_id,
    const std::map<std::string, ModelRecord>& registry);

}  // namespace annolab
