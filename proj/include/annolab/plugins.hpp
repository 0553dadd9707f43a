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

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "annolab/domain.hpp"
#include "annolab/util.hpp"

namespace annolab {

/// Thrown from TaskContext::checkpoint() once cancellation was requested.
struct TaskCancelled {};

/// Everything a plugin sees of a job.
struct TaskRequest {
  std::string job_id;
  TaskKind kind = TaskKind::kPredict;
  std::string plugin_id;
  std::string task_name;
  Bytes input;
  std::optional<Bytes> artifact;
  Json params = Json::object();
};

class TaskContext {
 public:
  using CancelProbe = std::function<bool()>;
  using LogSink = std::function<void(std::string_view)>;

  TaskContext(CancelProbe probe, LogSink sink)
      : probe_(std::move(probe)), sink_(std::move(sink)) {}

  /// Throws TaskCancelled if the probe reports a pending cancel.
  void checkpoint() const;
  bool cancel_requested() const { return probe_ && probe_(); }
  /// Appends one line to the job log.
  void log(std::string_view line) const;

 private:
  CancelProbe probe_;
  LogSink sink_;
};

struct ExecutionOutcome {
  struct Ok {
    Bytes result;
  };
  struct Err {
    std::string reason;
  };
  struct Cancelled {};

  std::variant<Ok, Err, Cancelled> value;
  std::string log;

  bool ok() const { return std::holds_alternative<Ok>(value); }
  bool cancelled() const { return std::holds_alternative<Cancelled>(value); }
  const Bytes& result() const { return std::get<Ok>(value).result; }
  const std::string& reason() const { return std::get<Err>(value).reason; }
};

/// An executable plugin: its manifest plus the entry point for every task it
/// declares. Implementations must tolerate concurrent run() calls.
class Plugin {
 public:
  virtual ~Plugin() = default;
  virtual const PluginManifest& manifest() const = 0;
  /// Returns the result blob; throws to fail the task.
  virtual Bytes run(const TaskRequest& request, const TaskContext& ctx) const = 0;
};

/// Forwards every task to the manifest's external URL.
class ExternalPlugin final : public Plugin {
 public:
  ExternalPlugin(PluginManifest manifest, std::chrono::milliseconds timeout);
  const PluginManifest& manifest() const override { return manifest_; }
  Bytes run(const TaskRequest& request, const TaskContext& ctx) const override;

 private:
  PluginManifest manifest_;
  std::chrono::milliseconds timeout_;
};

class PluginRegistry {
 public:
  /// Returns false (and leaves the registry unchanged) on a duplicate id.
  bool add(std::shared_ptr<const Plugin> plugin);
  const Plugin* find(std::string_view plugin_id) const;
  const PluginManifest* manifest(std::string_view plugin_id) const;
  std::vector<const PluginManifest*> manifests() const;
  std::size_t size() const { return plugins_.size(); }

 private:
  std::map<std::string, std::shared_ptr<const Plugin>, std::less<>> plugins_;
};

std::shared_ptr<const Plugin> make_postcorrect_plugin();
std::shared_ptr<const Plugin> make_diarize_plugin();
std::shared_ptr<const Plugin> make_stub_translate_plugin();

inline constexpr std::chrono::milliseconds kExternalTimeout{120'000};

/// Built-ins plus every valid `<dir>/*/plugin.manifest.json`. Invalid
/// manifests and ids colliding with an earlier entry are skipped with a
/// warning. Throws kIo if `dir` is given but cannot be read.
PluginRegistry discover_plugins(
    const std::optional<std::filesystem::path>& dir,
    const std::function<void(const std::string&)>& warn = {},
    std::chrono::milliseconds external_timeout = kExternalTimeout);

/// Runs a task. Never throws: unknown plugins, plugin failures and
/// cancellation all come back as outcomes, with the log collected so far.
ExecutionOutcome execute_task(const TaskRequest& request, const PluginRegistry& registry,
                              const TaskContext::CancelProbe& cancel_probe,
                              const TaskContext::LogSink& log_sink);

/// POSTs the task document with the input inlined to `url` and relays the
/// response body.
ExecutionOutcome forward_external(const TaskRequest& request, const std::string& url,
                                  std::chrono::milliseconds timeout);

/// Task document as carried by the worker protocol and external forwarding.
Json task_document(const TaskRequest& request);

// ---------------------------------------------------------------------------
// Format helpers shared by the service and the plugins

/// Dataset format expected by fine-tuning `task` of `manifest`: the input of
/// the plugin's train task when it has one, else text pairs.
DatasetFormat finetune_format(const PluginManifest& manifest);
std::optional<DatasetFormat> format_for_input(InputKind kind);

/// Parses and counts the records of an uploaded dataset. Throws
/// kInvalidArgument naming the first bad line (jsonl) or item (json).
std::int64_t validate_dataset(DatasetFormat format, std::string_view bytes);

using Lexicon = std::map<std::string, std::string>;

/// Replaces each single-space-separated token found in `lexicon`.
std::string stub_translate(std::string_view text, const Lexicon& lexicon);

}  // namespace annolab
