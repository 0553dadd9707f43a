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


#include "annolab/cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "annolab/api.hpp"
#include "annolab/clock.hpp"
#include "annolab/error.hpp"
#include "annolab/plugins.hpp"
#include "annolab/store.hpp"
#include "annolab/worker.hpp"

namespace annolab {
namespace {

/// Exit code carried out of a subcommand callback.
struct ExitWith {
  int code;
};

std::string env_or(const char* name, std::string fallback = {}) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : std::move(fallback);
}

std::vector<std::string> reversed(const std::vector<std::string>& args) {
  return {args.rbegin(), args.rend()};
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "cannot write " + path);
}

/// Parses CLI11 arguments; returns an exit code when parsing ended the
/// command (help, usage error).
std::optional<int> parse(CLI::App& app, const std::vector<std::string>& args,
                         std::ostream& out, std::ostream& err) {
  try {
    app.parse(reversed(args));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return std::nullopt;
}

/// Blocks SIGINT and SIGTERM on the calling thread (and every thread it
/// starts afterwards) and restores the old mask on destruction.
class SignalBlock {
 public:
  SignalBlock() {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set_, &old_);
  }
  ~SignalBlock() { pthread_sigmask(SIG_SETMASK, &old_, nullptr); }

  int wait() const {
    int sig = 0;
    sigwait(&set_, &sig);
    return sig;
  }

 private:
  sigset_t set_;
  sigset_t old_;
};

// ---------------------------------------------------------------------------
// client

struct ApiResponse {
  int status = 0;
  std::string body;

  Json json() const {
    auto doc = Json::parse(body, nullptr, false);
    if (doc.is_discarded()) fail(ErrorCode::kIo, "malformed response body");
    return doc;
  }
};

class ApiClient {
 public:
  ApiClient(std::string server, std::string token)
      : server_(std::move(server)), token_(std::move(token)) {
    while (!server_.empty() && server_.back() == '/') server_.pop_back();
  }

  ApiResponse get(const std::string& path) { return send("GET", path, {}); }
  ApiResponse post(const std::string& path, const Json& body) {
    return send("POST", path, body.dump());
  }
  ApiResponse patch(const std::string& path, const Json& body) {
    return send("PATCH", path, body.dump());
  }
  ApiResponse del(const std::string& path) { return send("DELETE", path, {}); }

 private:
  ApiResponse send(const std::string& method, const std::string& path, const std::string& body) {
    if (server_.empty()) fail(ErrorCode::kInvalidArgument, "no server; pass --server or set ANNOLAB_SERVER");
    httplib::Client client(server_);
    if (!token_.empty()) client.set_bearer_token_auth(token_);
    client.set_connection_timeout(5, 0);
    client.set_read_timeout(120, 0);
    client.set_write_timeout(120, 0);
    httplib::Result res{nullptr, httplib::Error::Unknown};
    if (method == "GET") {
      res = client.Get(path);
    } else if (method == "POST") {
      res = client.Post(path, body, "application/json");
    } else if (method == "PATCH") {
      res = client.Patch(path, body, "application/json");
    } else {
      res = client.Delete(path);
    }
    if (!res) {
      fail(ErrorCode::kIo, "cannot reach " + server_ + ": " + httplib::to_string(res.error()));
    }
    if (res->status >= 400) {
      auto doc = Json::parse(res->body, nullptr, false);
      if (!doc.is_discarded() && doc.contains("error") && doc["error"].is_object()) {
        fail(error_code_from_string(doc["error"].value("code", "internal")),
             doc["error"].value("message", "HTTP " + std::to_string(res->status)));
      }
      fail(ErrorCode::kIo, method + " " + path + ": HTTP " + std::to_string(res->status));
    }
    return {res->status, res->body};
  }

  std::string server_;
  std::string token_;
};

Job wait_for_job(ApiClient& api, const std::string& job_id, std::chrono::milliseconds poll) {
  for (;;) {
    auto job = api.get("/api/jobs/" + job_id).json().get<Job>();
    if (is_terminal(job.status)) return job;
    std::this_thread::sleep_for(poll);
  }
}

int report_unsuccessful(const Job& job, std::ostream& err) {
  err << "job " << job.job_id << " " << to_string(job.status);
  if (job.failure_reason) err << ": " << *job.failure_reason;
  err << "\n";
  return kExitJobFailed;
}

/// Left-aligned column; always at least one space wide.
std::string pad(std::string s, std::size_t width) {
  s.append(s.size() < width ? width - s.size() : 1, ' ');
  return s;
}

}  // namespace

int run_client(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Script the annolab REST API", "annolab client"};
  app.require_subcommand(1);
  // Global flags such as --json may also follow the subcommand.
  app.fallthrough();
  std::string server = env_or("ANNOLAB_SERVER");
  std::string token = env_or("ANNOLAB_TOKEN");
  bool raw_json = false;
  int poll_ms = 200;
  app.add_option("--server", server, "Server URL (ANNOLAB_SERVER)");
  app.add_option("--token", token, "Bearer token (ANNOLAB_TOKEN)");
  app.add_flag("--json", raw_json, "Print the raw API response");
  app.add_option("--poll-ms", poll_ms, "Polling interval for --wait and jobs-tail")
      ->check(CLI::Range(10, 60'000));

  // Each callback fills `action`; running it after parsing keeps usage
  // errors (exit 2) apart from API errors (exit 1).
  std::function<int(ApiClient&)> action;

  std::string username, password;
  auto* login = app.add_subcommand("login", "Exchange credentials for a token");
  login->add_option("username", username)->required();
  login->add_option("password", password)->required();
  login->callback([&] {
    action = [&](ApiClient& api) {
      const auto res = api.post("/api/auth/token", {{"username", username}, {"password", password}});
      if (raw_json) {
        out << res.body << "\n";
      } else {
        out << res.json().at("token").get<std::string>() << "\n";
      }
      return kExitOk;
    };
  });

  std::string role = "user";
  auto* users_create = app.add_subcommand("users-create", "Create an account (admin only)");
  users_create->add_option("username", username)->required();
  users_create->add_option("password", password)->required();
  users_create->add_option("--role", role)->check(CLI::IsMember({"user", "admin", "worker"}));
  users_create->callback([&] {
    action = [&](ApiClient& api) {
      const auto res = api.post("/api/users",
                                {{"username", username}, {"password", password}, {"role", role}});
      if (raw_json) {
        out << res.body << "\n";
      } else {
        out << res.json().at("user_id").get<std::string>() << "\n";
      }
      return kExitOk;
    };
  });

  auto* models = app.add_subcommand("models", "List visible models");
  models->callback([&] {
    action = [&](ApiClient& api) {
      const auto res = api.get("/api/models");
      if (raw_json) {
        out << res.body << "\n";
        return kExitOk;
      }
      const auto doc = res.json();
      for (const auto& m : doc.at("models")) {
        out << pad(m.at("model_id").get<std::string>(), 26)
            << pad(m.at("plugin_id").get<std::string>() + "/" + m.at("task_name").get<std::string>(),
                   28)
            << pad(m.at("status").get<std::string>(), 10)
            << pad(m.at("visibility").get<std::string>(), 9)
            << (m.contains("parent_model_id") && m["parent_model_id"].is_string()
                    ? m["parent_model_id"].get<std::string>()
                    : std::string("-"))
            << "\n";
      }
      return kExitOk;
    };
  });

  std::string model_id, in_file, text, dataset_id, params_text = "{}", out_file;
  bool wait = false;
  auto* predict = app.add_subcommand("predict", "Run a model on an input");
  predict->add_option("--model", model_id)->required();
  auto* in_opt = predict->add_option("--in", in_file, "Input file")->check(CLI::ExistingFile);
  auto* text_opt = predict->add_option("--text", text, "Inline text input");
  auto* ds_opt = predict->add_option("--dataset", dataset_id, "Use an uploaded dataset as input");
  in_opt->excludes(text_opt)->excludes(ds_opt);
  text_opt->excludes(ds_opt);
  predict->add_option("--params", params_text, "Task parameters as a JSON object");
  predict->add_flag("--wait", wait, "Poll until the job ends and print the result");
  predict->add_option("--out", out_file, "Write the result here instead of stdout");
  predict->callback([&] {
    if (in_file.empty() && text.empty() && dataset_id.empty()) {
      throw CLI::RequiredError("one of --in, --text, --dataset");
    }
    action = [&](ApiClient& api) {
      const auto params = Json::parse(params_text, nullptr, false);
      if (params.is_discarded() || !params.is_object()) {
        fail(ErrorCode::kInvalidArgument, "--params must be a JSON object");
      }
      Json body = {{"params", params}};
      if (!in_file.empty()) {
        body["input_b64"] = base64_encode(read_file(in_file));
      } else if (!dataset_id.empty()) {
        body["input_ref"] = dataset_id;
      } else {
        body["inline_input"] = text;
      }
      const auto res = api.post("/api/models/" + model_id + "/predict", body);
      const auto job_id = res.json().at("job_id").get<std::string>();
      if (!wait) {
        out << (raw_json ? res.body : job_id) << "\n";
        return kExitOk;
      }
      const auto job = wait_for_job(api, job_id, std::chrono::milliseconds(poll_ms));
      if (job.status != JobStatus::kSucceeded) return report_unsuccessful(job, err);
      const auto result = api.get("/api/jobs/" + job_id + "/result").body;
      if (!out_file.empty()) {
        write_file(out_file, result);
      } else {
        out << result;
      }
      return kExitOk;
    };
  });

  auto* finetune = app.add_subcommand("finetune", "Fine-tune a model on a dataset");
  finetune->add_option("--model", model_id)->required();
  finetune->add_option("--dataset", dataset_id)->required();
  finetune->add_option("--params", params_text, "Training parameters as a JSON object");
  finetune->add_flag("--wait", wait, "Poll until training ends");
  finetune->callback([&] {
    action = [&](ApiClient& api) {
      const auto params = Json::parse(params_text, nullptr, false);
      if (params.is_discarded() || !params.is_object()) {
        fail(ErrorCode::kInvalidArgument, "--params must be a JSON object");
      }
      const auto res = api.post("/api/models/" + model_id + "/finetune",
                                {{"dataset_id", dataset_id}, {"params", params}});
      const auto doc = res.json();
      if (wait) {
        const auto job = wait_for_job(api, doc.at("job_id").get<std::string>(),
                                      std::chrono::milliseconds(poll_ms));
        if (job.status != JobStatus::kSucceeded) return report_unsuccessful(job, err);
      }
      out << (raw_json ? res.body : doc.at("new_model_id").get<std::string>()) << "\n";
      return kExitOk;
    };
  });

  std::string file, format, task_name;
  auto* upload = app.add_subcommand("dataset-upload", "Upload a dataset");
  upload->add_option("--file", file)->required()->check(CLI::ExistingFile);
  upload->add_option("--format", format)
      ->required()
      ->check(CLI::IsMember({"text_pairs_jsonl", "enrollment_json", "embedding_windows_json"}));
  upload->add_option("--task", task_name, "Task the dataset is meant for");
  upload->callback([&] {
    action = [&](ApiClient& api) {
      Json body = {{"format", format}, {"content_b64", base64_encode(read_file(file))}};
      if (!task_name.empty()) body["task_name"] = task_name;
      const auto res = api.post("/api/datasets", body);
      out << (raw_json ? res.body : res.json().at("dataset_id").get<std::string>()) << "\n";
      return kExitOk;
    };
  });

  std::string job_id;
  auto* tail = app.add_subcommand("jobs-tail", "Stream a job's log until it ends");
  tail->add_option("job", job_id)->required();
  tail->callback([&] {
    action = [&](ApiClient& api) {
      std::int64_t offset = 0;
      for (;;) {
        const auto doc =
            api.get("/api/jobs/" + job_id + "/logs?offset=" + std::to_string(offset)).json();
        out << base64_decode(doc.at("payload_b64").get<std::string>());
        out.flush();
        const auto next = doc.at("next_offset").get<std::int64_t>();
        if (doc.at("finished").get<bool>() && next == offset) break;
        if (next == offset) std::this_thread::sleep_for(std::chrono::milliseconds(poll_ms));
        offset = next;
      }
      const auto job = api.get("/api/jobs/" + job_id).json().get<Job>();
      return job.status == JobStatus::kSucceeded ? kExitOk : report_unsuccessful(job, err);
    };
  });

  std::string status_filter;
  auto* jobs = app.add_subcommand("jobs", "List your jobs");
  jobs->add_option("--status", status_filter)
      ->check(CLI::IsMember({"queued", "running", "succeeded", "failed", "cancelled"}));
  jobs->callback([&] {
    action = [&](ApiClient& api) {
      const auto res =
          api.get("/api/jobs" + (status_filter.empty() ? "" : "?status=" + status_filter));
      if (raw_json) {
        out << res.body << "\n";
        return kExitOk;
      }
      const auto doc = res.json();
      for (const auto& j : doc.at("jobs")) {
        out << pad(j.at("job_id").get<std::string>(), 20) << pad(j.at("kind").get<std::string>(), 9)
            << pad(j.at("status").get<std::string>(), 11)
            << j.at("plugin_id").get<std::string>() << "/" << j.at("task_name").get<std::string>()
            << "\n";
      }
      return kExitOk;
    };
  });

  auto* job_cmd = app.add_subcommand("job", "Show one job");
  job_cmd->add_option("job", job_id)->required();
  job_cmd->callback([&] {
    action = [&](ApiClient& api) {
      const auto res = api.get("/api/jobs/" + job_id);
      out << (raw_json ? res.body : res.json().dump(2)) << "\n";
      return kExitOk;
    };
  });

  auto* cancel = app.add_subcommand("cancel", "Cancel a job");
  cancel->add_option("job", job_id)->required();
  cancel->callback([&] {
    action = [&](ApiClient& api) {
      const auto res = api.post("/api/jobs/" + job_id + "/cancel", Json::object());
      out << (raw_json ? res.body : res.json().at("status").get<std::string>()) << "\n";
      return kExitOk;
    };
  });

  auto* restart = app.add_subcommand("restart", "Requeue a failed or cancelled job");
  restart->add_option("job", job_id)->required();
  restart->callback([&] {
    action = [&](ApiClient& api) {
      const auto res = api.post("/api/jobs/" + job_id + "/restart", Json::object());
      out << (raw_json ? res.body : res.json().at("status").get<std::string>()) << "\n";
      return kExitOk;
    };
  });

  auto* result = app.add_subcommand("result", "Fetch a succeeded job's result");
  result->add_option("job", job_id)->required();
  result->add_option("--out", out_file);
  result->callback([&] {
    action = [&](ApiClient& api) {
      const auto body = api.get("/api/jobs/" + job_id + "/result").body;
      if (out_file.empty()) {
        out << body;
      } else {
        write_file(out_file, body);
      }
      return kExitOk;
    };
  });

  bool make_private = false;
  auto* share = app.add_subcommand("share", "Make a model public (or private again)");
  share->add_option("model", model_id)->required();
  share->add_flag("--private", make_private);
  share->callback([&] {
    action = [&](ApiClient& api) {
      const auto res = api.patch("/api/models/" + model_id,
                                 {{"visibility", make_private ? "private" : "public"}});
      out << (raw_json ? res.body : res.json().at("visibility").get<std::string>()) << "\n";
      return kExitOk;
    };
  });

  std::string target;
  auto* del = app.add_subcommand("delete", "Delete a model (with its jobs and data) or a dataset");
  del->add_option("id", target, "Model id (m-...) or dataset id (d-...)")->required();
  del->callback([&] {
    action = [&](ApiClient& api) {
      const bool dataset = target.rfind("d-", 0) == 0;
      const auto res = api.del((dataset ? "/api/datasets/" : "/api/models/") + target);
      if (raw_json) {
        out << res.body << "\n";
      } else {
        const auto doc = res.json();
        for (const auto& id : doc.at("deleted")) out << id.get<std::string>() << "\n";
      }
      return kExitOk;
    };
  });

  if (const auto code = parse(app, args, out, err)) return *code;
  try {
    ApiClient api(server, token);
    return action(api);
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

// ---------------------------------------------------------------------------
// serve

int run_serve(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Run the annolab API service", "annolab serve"};
  std::string data_dir;
  std::string addr = "127.0.0.1:8077";
  std::string bootstrap_admin;
  bool inline_worker = false;
  int inline_parallelism = 2;
  std::int64_t lease_ms = kDefaultLeaseMs;
  std::string plugins_dir;
  std::string static_dir;
  bool no_fsync = false;
  app.add_option("--data-dir", data_dir, "Directory holding all service state")->required();
  app.add_option("--addr", addr, "HOST:PORT to listen on");
  app.add_option("--bootstrap-admin", bootstrap_admin,
                 "USER:PASS; creates the admin account if it does not exist");
  app.add_flag("--inline-worker", inline_worker, "Run a worker inside the server process");
  app.add_option("--inline-parallelism", inline_parallelism)->check(CLI::Range(1, 64));
  app.add_option("--lease-ms", lease_ms, "Task lease duration")->check(CLI::Range(100, 86'400'000));
  app.add_option("--plugins-dir", plugins_dir, "Directory of external plugin manifests");
  app.add_option("--static-dir", static_dir, "Static files served under /");
  app.add_flag("--no-fsync", no_fsync, "Skip fsync on store writes");
  if (const auto code = parse(app, args, out, err)) return *code;

  const auto colon = addr.rfind(':');
  int port = -1;
  if (colon != std::string::npos) {
    try {
      port = std::stoi(addr.substr(colon + 1));
    } catch (const std::exception&) {
    }
  }
  if (port < 0 || port > 65535) {
    err << "error: --addr must be HOST:PORT\n";
    return kExitUsage;
  }
  const auto host = addr.substr(0, colon);
  std::string admin_user, admin_pass;
  if (!bootstrap_admin.empty()) {
    const auto sep = bootstrap_admin.find(':');
    if (sep == std::string::npos || sep == 0) {
      err << "error: --bootstrap-admin must be USER:PASS\n";
      return kExitUsage;
    }
    admin_user = bootstrap_admin.substr(0, sep);
    admin_pass = bootstrap_admin.substr(sep + 1);
  }

  SignalBlock signals;
  try {
    auto store = Store::open(data_dir, !no_fsync);
    const auto registry = discover_plugins(
        plugins_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(plugins_dir),
        [](const std::string& w) { spdlog::warn("{}", w); });
    SystemClock clock;
    ServiceConfig config;
    config.lease_ms = lease_ms;
    ApiService service(*store, clock, registry, config);
    service.bootstrap();
    if (!admin_user.empty() && !service.user_exists(admin_user)) {
      service.create_user(admin_user, admin_pass, Role::kAdmin);
      spdlog::info("created admin account {}", admin_user);
    }

    HttpFrontend frontend(service, static_dir.empty() ? std::nullopt
                                                      : std::optional<std::string>(static_dir));
    const int bound = frontend.bind(host, port);
    for (const auto& r : service.route_table()) {
      spdlog::info("route {:6} {:32} auth={}", r.at("method").get<std::string>(),
                   r.at("path").get<std::string>(), r.at("auth").get<std::string>());
    }
    service.start_background();
    frontend.start();
    out << "listening on http://" << host << ":" << bound << std::endl;

    std::unique_ptr<InlineWorkerBackend> backend;
    std::unique_ptr<Worker> worker;
    std::thread worker_thread;
    if (inline_worker) {
      WorkerConfig wc;
      wc.worker_id = "inline-" + random_hex(3);
      std::set<std::string> classes;
      for (const auto* m : registry.manifests()) {
        for (const auto& t : m->tasks) classes.insert(t.queue_class);
      }
      wc.queue_classes.assign(classes.begin(), classes.end());
      wc.parallelism = inline_parallelism;
      wc.poll_interval = std::chrono::milliseconds(100);
      backend = std::make_unique<InlineWorkerBackend>(service);
      worker = std::make_unique<Worker>(wc, *backend, registry);
      worker_thread = std::thread([&] { worker->run(); });
      spdlog::info("inline worker {} on {}", wc.worker_id, join(wc.queue_classes, ","));
    }

    const int sig = signals.wait();
    spdlog::info("signal {}; shutting down", sig);
    if (worker) {
      worker->stop();
      worker_thread.join();
    }
    frontend.stop();
    service.stop_background();
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

// ---------------------------------------------------------------------------
// worker

int run_worker(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Run a worker node", "annolab worker"};
  std::string server = env_or("ANNOLAB_SERVER");
  std::string token = env_or("ANNOLAB_TOKEN");
  std::vector<std::string> queues = {"cpu-light", "cpu-heavy"};
  WorkerConfig config;
  std::string plugins_dir;
  int poll_ms = 500;
  int heartbeat_ms = 0;
  app.add_option("--server", server, "Server URL (ANNOLAB_SERVER)");
  app.add_option("--token", token, "Worker token (ANNOLAB_TOKEN)");
  app.add_option("--queues", queues, "Queue classes to serve")->delimiter(',');
  app.add_option("--parallelism", config.parallelism)->check(CLI::Range(1, 256));
  app.add_option("--plugins-dir", plugins_dir, "Directory of external plugin manifests");
  app.add_option("--worker-id", config.worker_id);
  app.add_option("--poll-ms", poll_ms)->check(CLI::Range(10, 60'000));
  app.add_option("--heartbeat-ms", heartbeat_ms, "0 derives it from the lease")
      ->check(CLI::Range(0, 3'600'000));
  app.add_flag("--drain", config.drain_on_stop, "Finish in-flight tasks on interrupt");
  if (const auto code = parse(app, args, out, err)) return *code;
  if (server.empty() || token.empty()) {
    err << "error: --server and --token (or ANNOLAB_SERVER / ANNOLAB_TOKEN) are required\n";
    return kExitUsage;
  }
  if (config.worker_id.empty()) config.worker_id = default_worker_id();
  config.queue_classes = queues;
  config.poll_interval = std::chrono::milliseconds(poll_ms);
  config.heartbeat_interval = std::chrono::milliseconds(heartbeat_ms);

  SignalBlock signals;
  try {
    config.validate();
    const auto registry = discover_plugins(
        plugins_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(plugins_dir),
        [](const std::string& w) { spdlog::warn("{}", w); });
    HttpWorkerBackend backend(server, token);
    Worker worker(config, backend, registry);

    std::atomic<bool> finished{false};
    std::thread watcher([&] {
      signals.wait();
      if (!finished.load()) {
        spdlog::info("interrupted; stopping worker {}", config.worker_id);
        worker.stop();
      }
    });
    spdlog::info("worker {} serving {} against {}", config.worker_id, join(queues, ","), server);
    const int code = worker.run();
    finished.store(true);
    pthread_kill(watcher.native_handle(), SIGTERM);
    watcher.join();
    if (code == kExitBadToken) err << "error: the server rejected the worker token\n";
    return code;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int run_cli(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("annolab"));
  if (const char* level = std::getenv("ANNOLAB_LOG_LEVEL")) {
    spdlog::set_level(spdlog::level::from_str(level));
  }
  const std::string usage =
      "usage: annolab <serve|worker|client> [options]\n"
      "       annolab <persona> --help\n";
  if (argc < 2) {
    std::cerr << usage;
    return kExitUsage;
  }
  const std::string persona = argv[1];
  const std::vector<std::string> rest(argv + 2, argv + argc);
  if (persona == "serve") return run_serve(rest, std::cout, std::cerr);
  if (persona == "worker") return run_worker(rest, std::cout, std::cerr);
  if (persona == "client") return run_client(rest, std::cout, std::cerr);
  if (persona == "--help" || persona == "-h") {
    std::cout << usage;
    return kExitOk;
  }
  std::cerr << "unknown command " << persona << "\n" << usage;
  return kExitUsage;
}

}  // namespace annolab
