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


#include "annolab/plugins.hpp"

#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

#include "annolab/diarize.hpp"
#include "annolab/error.hpp"
#include "annolab/postcorrect.hpp"

#include <httplib.h>

namespace annolab {
namespace {

TaskSpec task(std::string name, TaskKind kind, InputKind in, OutputKind out,
              std::string queue_class, bool finetune) {
  TaskSpec t;
  t.task_name = std::move(name);
  t.kind = kind;
  t.input_kind = in;
  t.output_kind = out;
  t.queue_class = std::move(queue_class);
  t.supports_finetune = finetune;
  t.languages = {"*"};
  return t;
}

std::string format_double(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

Json parse_json_input(std::string_view bytes, std::string_view what) {
  auto doc = Json::parse(bytes, nullptr, false);
  if (doc.is_discarded()) {
    fail(ErrorCode::kInvalidArgument, std::string(what) + " is not valid JSON");
  }
  return doc;
}

// ---------------------------------------------------------------------------
// postcorrect

class PostcorrectPlugin final : public Plugin {
 public:
  PostcorrectPlugin() {
    manifest_.plugin_id = "postcorrect";
    manifest_.version = "1.0.0";
    manifest_.tasks = {
        task("correct", TaskKind::kPredict, InputKind::kTextLines, OutputKind::kTextLines,
             "cpu-light", true),
        task("train", TaskKind::kTrain, InputKind::kTextPairs, OutputKind::kModelArtifact,
             "cpu-heavy", false),
    };
  }

  const PluginManifest& manifest() const override { return manifest_; }

  Bytes run(const TaskRequest& req, const TaskContext& ctx) const override {
    using namespace postcorrect;
    std::optional<PostCorrector> base;
    if (req.artifact) base = PostCorrector::from_json(parse_json_input(*req.artifact, "model"));
    const auto checkpoint = [&ctx] { ctx.checkpoint(); };

    if (req.kind == TaskKind::kTrain) {
      const auto pairs = parse_text_pairs_jsonl(req.input);
      const auto config =
          TrainConfig::from_json(req.params, base ? base->config() : TrainConfig{});
      ctx.log("training on " + std::to_string(pairs.size()) + " page pair(s)" +
              (base ? " on top of the parent model" : ""));
      TrainReport report;
      const auto model = PostCorrector::train(pairs, config, &report, checkpoint,
                                              base ? &*base : nullptr);
      ctx.log("pages_used=" + std::to_string(report.pages_used) +
              format_double(" cer_before=%.4f", report.cer_before) +
              format_double(" cer_after=%.4f", report.cer_after));
      ctx.log("inventory: " + std::to_string(model.inventory().substitutions.size()) +
              " substitution source(s), " +
              std::to_string(model.inventory().skippable.size()) + " skippable, " +
              std::to_string(model.inventory().insertable.size()) + " insertable");
      return model.to_json().dump();
    }

    if (!base) {
      ctx.log("model has no trained corrections; output equals input");
      return req.input;
    }
    PostCorrector model = std::move(*base);
    if (req.params.is_object() && req.params.contains("beam")) {
      model.set_beam(req.params.at("beam").get<int>());
    }
    const auto lines = std::count(req.input.begin(), req.input.end(), '\n') + 1;
    ctx.log("correcting " + std::to_string(lines) + " line(s)");
    return model.decode_text(req.input, checkpoint);
  }

 private:
  PluginManifest manifest_;
};

// ---------------------------------------------------------------------------
// diarize

struct AudioItem {
  std::vector<diarize::EmbeddingWindow> windows;
  std::vector<diarize::Annotation> annotations;
  double duration = 0.0;
};

AudioItem parse_audio_item(const Json& item, const diarize::DiarizeConfig& config,
                           const std::function<void()>& checkpoint) {
  if (!item.is_object()) fail(ErrorCode::kInvalidArgument, "item must be an object");
  AudioItem out;
  if (item.contains("audio_b64")) {
    const auto audio = diarize::parse_wav(base64_decode(item.at("audio_b64").get<std::string>()));
    out.windows = diarize::embed_windows(audio, config, checkpoint);
    out.duration = audio.duration();
  } else if (item.contains("windows")) {
    out.windows = diarize::parse_embedding_windows_json(item.at("windows"));
    out.duration = out.windows.empty() ? 0.0 : out.windows.back().end_s;
  } else {
    fail(ErrorCode::kInvalidArgument, "item needs audio_b64 or windows");
  }
  if (item.contains("annotations")) {
    out.annotations = diarize::parse_annotations_json(item.at("annotations"));
  }
  return out;
}

class DiarizePlugin final : public Plugin {
 public:
  DiarizePlugin() {
    manifest_.plugin_id = "diarize";
    manifest_.version = "1.0.0";
    manifest_.tasks = {
        task("diarize", TaskKind::kPredict, InputKind::kWavAudio, OutputKind::kSegments,
             "cpu-light", true),
        task("enroll", TaskKind::kTrain, InputKind::kEnrollmentAnnotations,
             OutputKind::kModelArtifact, "cpu-light", false),
    };
  }

  const PluginManifest& manifest() const override { return manifest_; }

  Bytes run(const TaskRequest& req, const TaskContext& ctx) const override {
    const auto config = diarize::DiarizeConfig::from_json(req.params);
    std::vector<diarize::SpeakerProfile> known;
    if (req.artifact) {
      known = diarize::profiles_from_json(parse_json_input(*req.artifact, "model"));
    }
    const auto checkpoint = [&ctx] { ctx.checkpoint(); };
    const auto warn = [&ctx](const std::string& msg) { ctx.log("warning: " + msg); };

    if (req.kind == TaskKind::kTrain) {
      const auto doc = parse_json_input(req.input, "enrollment data");
      if (!doc.is_array() || doc.empty()) {
        fail(ErrorCode::kInvalidArgument, "enrollment data must be a nonempty array");
      }
      // Items are laid end to end on one timeline, a second apart, so a
      // single enroll() averages each label over all of its windows.
      AudioItem all;
      double offset = 0.0;
      for (const auto& item : doc) {
        ctx.checkpoint();
        auto parsed = parse_audio_item(item, config, checkpoint);
        for (auto& w : parsed.windows) {
          w.start_s += offset;
          w.end_s += offset;
          all.windows.push_back(std::move(w));
        }
        for (auto& a : parsed.annotations) {
          a.start_s += offset;
          a.end_s += offset;
          all.annotations.push_back(std::move(a));
        }
        offset += parsed.duration + 1.0;
      }
      auto profiles = diarize::enroll(all.windows, all.annotations, warn);
      for (const auto& p : known) {
        const bool replaced = std::any_of(profiles.begin(), profiles.end(),
                                          [&](const auto& q) { return q.label == p.label; });
        if (!replaced) profiles.push_back(p);
      }
      std::sort(profiles.begin(), profiles.end(),
                [](const auto& a, const auto& b) { return a.label < b.label; });
      for (const auto& p : profiles) {
        ctx.log("speaker " + p.label + format_double(": %.2f s of enrollment audio", p.support_s));
      }
      return diarize::profiles_to_json(profiles).dump();
    }

    AudioItem item;
    if (req.input.size() >= 4 && std::string_view(req.input).substr(0, 4) == "RIFF") {
      const auto audio = diarize::parse_wav(req.input);
      item.windows = diarize::embed_windows(audio, config, checkpoint);
    } else {
      const auto doc = parse_json_input(req.input, "diarization input");
      if (doc.is_object() && doc.contains("dim")) {
        item.windows = diarize::parse_embedding_windows_json(doc);
      } else {
        item = parse_audio_item(doc, config, checkpoint);
      }
    }
    if (req.params.is_object() && req.params.contains("annotations")) {
      const auto extra = diarize::parse_annotations_json(req.params.at("annotations"));
      item.annotations.insert(item.annotations.end(), extra.begin(), extra.end());
    }
    ctx.checkpoint();
    ctx.log("diarizing " + std::to_string(item.windows.size()) + " window(s)");
    const auto segments =
        diarize::diarize(item.windows, item.annotations, config, known, warn);
    ctx.log(std::to_string(segments.size()) + " segment(s)");
    return diarize::segments_to_json(segments);
  }

 private:
  PluginManifest manifest_;
};

// ---------------------------------------------------------------------------
// stub-translate

Lexicon lexicon_from_artifact(const Bytes& bytes) {
  const auto doc = parse_json_input(bytes, "lexicon");
  if (doc.value("format", std::string{}) != "annolab.lexicon/1") {
    fail(ErrorCode::kInvalidArgument, "not a lexicon artifact");
  }
  return doc.at("lexicon").get<Lexicon>();
}

class StubTranslatePlugin final : public Plugin {
 public:
  StubTranslatePlugin() {
    manifest_.plugin_id = "stub-translate";
    manifest_.version = "1.0.0";
    manifest_.tasks = {task("translate", TaskKind::kPredict, InputKind::kTextLines,
                            OutputKind::kTextLines, "cpu-light", true)};
  }

  const PluginManifest& manifest() const override { return manifest_; }

  Bytes run(const TaskRequest& req, const TaskContext& ctx) const override {
    Lexicon lexicon;
    if (req.artifact) lexicon = lexicon_from_artifact(*req.artifact);
    if (req.kind == TaskKind::kPredict) return stub_translate(req.input, lexicon);

    const auto pairs = postcorrect::parse_text_pairs_jsonl(req.input);
    std::size_t added = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      ctx.checkpoint();
      const auto src = split(pairs[i].obs, ' ');
      const auto dst = split(pairs[i].truth, ' ');
      if (src.size() != dst.size()) {
        ctx.log("skipping pair " + std::to_string(i + 1) + ": token counts differ");
        continue;
      }
      for (std::size_t k = 0; k < src.size(); ++k) {
        if (src[k].empty()) continue;
        lexicon[src[k]] = dst[k];
        ++added;
      }
    }
    ctx.log("merged " + std::to_string(added) + " entr" + (added == 1 ? "y" : "ies") +
            "; lexicon size " + std::to_string(lexicon.size()));
    return Json{{"format", "annolab.lexicon/1"}, {"lexicon", lexicon}}.dump();
  }

 private:
  PluginManifest manifest_;
};

struct ParsedUrl {
  std::string origin;
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) fail(ErrorCode::kInvalidArgument, "bad URL " + url);
  return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

}  // namespace

void TaskContext::checkpoint() const {
  if (cancel_requested()) throw TaskCancelled{};
}

void TaskContext::log(std::string_view line) const {
  if (!sink_) return;
  std::string text(line);
  text.push_back('\n');
  sink_(text);
}

bool PluginRegistry::add(std::shared_ptr<const Plugin> plugin) {
  const auto& id = plugin->manifest().plugin_id;
  return plugins_.emplace(id, std::move(plugin)).second;
}

const Plugin* PluginRegistry::find(std::string_view plugin_id) const {
  const auto it = plugins_.find(plugin_id);
  return it == plugins_.end() ? nullptr : it->second.get();
}

const PluginManifest* PluginRegistry::manifest(std::string_view plugin_id) const {
  const auto* p = find(plugin_id);
  return p ? &p->manifest() : nullptr;
}

std::vector<const PluginManifest*> PluginRegistry::manifests() const {
  std::vector<const PluginManifest*> out;
  for (const auto& [id, p] : plugins_) out.push_back(&p->manifest());
  return out;
}

std::shared_ptr<const Plugin> make_postcorrect_plugin() {
  return std::make_shared<PostcorrectPlugin>();
}
std::shared_ptr<const Plugin> make_diarize_plugin() { return std::make_shared<DiarizePlugin>(); }
std::shared_ptr<const Plugin> make_stub_translate_plugin() {
  return std::make_shared<StubTranslatePlugin>();
}

ExternalPlugin::ExternalPlugin(PluginManifest manifest, std::chrono::milliseconds timeout)
    : manifest_(std::move(manifest)), timeout_(timeout) {}

Bytes ExternalPlugin::run(const TaskRequest& request, const TaskContext& ctx) const {
  ctx.log("forwarding to " + manifest_.external_url);
  auto outcome = forward_external(request, manifest_.external_url, timeout_);
  if (!outcome.ok()) fail(ErrorCode::kExternal, outcome.reason());
  return outcome.result();
}

PluginRegistry discover_plugins(const std::optional<std::filesystem::path>& dir,
                                const std::function<void(const std::string&)>& warn,
                                std::chrono::milliseconds external_timeout) {
  namespace fs = std::filesystem;
  PluginRegistry registry;
  registry.add(make_diarize_plugin());
  registry.add(make_postcorrect_plugin());
  registry.add(make_stub_translate_plugin());
  if (!dir) return registry;

  std::error_code ec;
  fs::directory_iterator it(*dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot read plugins dir " + dir->string() + ": " + ec.message());
  std::vector<fs::path> candidates;
  for (const auto& entry : it) {
    if (entry.is_directory() && fs::exists(entry.path() / "plugin.manifest.json")) {
      candidates.push_back(entry.path() / "plugin.manifest.json");
    }
  }
  std::sort(candidates.begin(), candidates.end());
  for (const auto& path : candidates) {
    try {
      std::ifstream in(path, std::ios::binary);
      std::stringstream buf;
      buf << in.rdbuf();
      auto manifest = validate_manifest(Json::parse(buf.str()));
      if (!manifest.is_external()) {
        fail(ErrorCode::kInvalidArgument,
             "directory plugins must declare external execution");
      }
      const auto id = manifest.plugin_id;
      if (!registry.add(std::make_shared<ExternalPlugin>(std::move(manifest), external_timeout))) {
        if (warn) warn("skipping " + path.string() + ": plugin id '" + id + "' already registered");
      }
    } catch (const std::exception& e) {
      if (warn) warn("skipping " + path.string() + ": " + e.what());
    }
  }
  return registry;
}

ExecutionOutcome execute_task(const TaskRequest& request, const PluginRegistry& registry,
                              const TaskContext::CancelProbe& cancel_probe,
                              const TaskContext::LogSink& log_sink) {
  ExecutionOutcome out;
  const auto sink = [&](std::string_view text) {
    out.log.append(text);
    if (log_sink) log_sink(text);
  };
  const TaskContext ctx(cancel_probe, sink);
  const Plugin* plugin = registry.find(request.plugin_id);
  if (!plugin) {
    out.value = ExecutionOutcome::Err{"unknown plugin " + request.plugin_id};
    return out;
  }
  if (!plugin->manifest().find_task(request.task_name)) {
    out.value = ExecutionOutcome::Err{"unknown task " + request.plugin_id + "/" +
                                      request.task_name};
    return out;
  }
  try {
    ctx.checkpoint();
    Bytes result = plugin->run(request, ctx);
    out.value = ExecutionOutcome::Ok{std::move(result)};
  } catch (const TaskCancelled&) {
    ctx.log("cancelled");
    out.value = ExecutionOutcome::Cancelled{};
  } catch (const std::exception& e) {
    ctx.log(std::string("error: ") + e.what());
    out.value = ExecutionOutcome::Err{e.what()};
  }
  return out;
}

Json task_document(const TaskRequest& request) {
  Json doc = {{"job_id", request.job_id},
              {"kind", to_string(request.kind)},
              {"plugin_id", request.plugin_id},
              {"task_name", request.task_name},
              {"params", request.params}};
  return doc;
}

ExecutionOutcome forward_external(const TaskRequest& request, const std::string& url,
                                  std::chrono::milliseconds timeout) {
  ExecutionOutcome out;
  ParsedUrl target;
  try {
    target = parse_url(url);
  } catch (const Error& e) {
    out.value = ExecutionOutcome::Err{e.what()};
    return out;
  }
  Json doc = task_document(request);
  doc["input_b64"] = base64_encode(request.input);
  if (request.artifact) doc["model_artifact_b64"] = base64_encode(*request.artifact);

  httplib::Client client(target.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  auto res = client.Post(target.path, doc.dump(), "application/json");
  if (!res) {
    out.value = ExecutionOutcome::Err{"external server connection failed: " +
                                      httplib::to_string(res.error())};
  } else if (res->status < 200 || res->status >= 300) {
    out.value = ExecutionOutcome::Err{"external server status " + std::to_string(res->status)};
  } else {
    out.value = ExecutionOutcome::Ok{res->body};
  }
  return out;
}

std::optional<DatasetFormat> format_for_input(InputKind kind) {
  switch (kind) {
    case InputKind::kTextPairs:
      return DatasetFormat::kTextPairsJsonl;
    case InputKind::kEnrollmentAnnotations:
      return DatasetFormat::kEnrollmentJson;
    case InputKind::kEmbeddingWindows:
      return DatasetFormat::kEmbeddingWindowsJson;
    default:
      return std::nullopt;
  }
}

DatasetFormat finetune_format(const PluginManifest& manifest) {
  if (const auto* train = manifest.train_task()) {
    if (auto f = format_for_input(train->input_kind)) return *f;
  }
  return DatasetFormat::kTextPairsJsonl;
}

std::int64_t validate_dataset(DatasetFormat format, std::string_view bytes) {
  switch (format) {
    case DatasetFormat::kTextPairsJsonl: {
      const auto pairs = postcorrect::parse_text_pairs_jsonl(bytes);
      if (pairs.empty()) fail(ErrorCode::kInvalidArgument, "dataset has no records");
      return static_cast<std::int64_t>(pairs.size());
    }
    case DatasetFormat::kEnrollmentJson: {
      const auto doc = parse_json_input(bytes, "enrollment dataset");
      if (!doc.is_array() || doc.empty()) {
        fail(ErrorCode::kInvalidArgument, "enrollment dataset must be a nonempty array");
      }
      for (std::size_t i = 0; i < doc.size(); ++i) {
        try {
          const auto& item = doc[i];
          if (!item.is_object()) fail(ErrorCode::kInvalidArgument, "not an object");
          if (item.contains("audio_b64")) {
            diarize::parse_wav(base64_decode(item.at("audio_b64").get<std::string>()));
          } else if (item.contains("windows")) {
            diarize::parse_embedding_windows_json(item.at("windows"));
          } else {
            fail(ErrorCode::kInvalidArgument, "needs audio_b64 or windows");
          }
          if (!item.contains("annotations") ||
              diarize::parse_annotations_json(item.at("annotations")).empty()) {
            fail(ErrorCode::kInvalidArgument, "needs nonempty annotations");
          }
        } catch (const std::exception& e) {
          fail(ErrorCode::kInvalidArgument, "item " + std::to_string(i + 1) + ": " + e.what());
        }
      }
      return static_cast<std::int64_t>(doc.size());
    }
    case DatasetFormat::kEmbeddingWindowsJson: {
      const auto windows =
          diarize::parse_embedding_windows_json(parse_json_input(bytes, "embedding windows"));
      return static_cast<std::int64_t>(windows.size());
    }
  }
  fail(ErrorCode::kInternal, "unhandled dataset format");
}

std::string stub_translate(std::string_view text, const Lexicon& lexicon) {
  std::string out;
  const auto lines = split(text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i > 0) out.push_back('\n');
    auto tokens = split(lines[i], ' ');
    for (auto& t : tokens) {
      const auto it = lexicon.find(t);
      if (it != lexicon.end()) t = it->second;
    }
    out += join(tokens, " ");
  }
  return out;
}

}  // namespace annolab
