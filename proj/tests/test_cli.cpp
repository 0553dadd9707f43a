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


#include <doctest.h>

#include <stdlib.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "annolab/cli.hpp"
#include "e2e.hpp"
#include "inproc.hpp"

using namespace annolab;
using annolab::testing::InProcessServer;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run client(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_client(args, out, err);
  return {code, out.str(), err.str()};
}

// Fails every run; with three attempts the job ends up failed.
class BoomPlugin final : public Plugin {
 public:
  BoomPlugin() {
    manifest_ = validate_manifest({{"plugin_id", "boom"},
                                   {"tasks", Json::array({{{"task_name", "run"},
                                                           {"kind", "predict"},
                                                           {"input_kind", "text_lines"},
                                                           {"output_kind", "text_lines"},
                                                           {"queue_class", "cpu-light"},
                                                           {"supports_finetune", false},
                                                           {"languages", {"eng"}}}})}});
  }
  const PluginManifest& manifest() const override { return manifest_; }
  Bytes run(const TaskRequest&, const TaskContext& ctx) const override {
    ctx.log("about to fail");
    throw std::runtime_error("kaboom");
  }

 private:
  PluginManifest manifest_;
};

struct Fixture {
  InProcessServer server;
  std::string token;
  fs::path dir;

  Fixture() : server(options()), token(server.add_user("alice")) {
    std::string tmpl = (fs::temp_directory_path() / "annolab-cli-XXXXXX").string();
    dir = ::mkdtemp(tmpl.data());
  }
  ~Fixture() { fs::remove_all(dir); }

  static InProcessServer::Options options() {
    InProcessServer::Options o;
    o.extra_plugins.push_back(std::make_shared<BoomPlugin>());
    return o;
  }

  Run run(std::vector<std::string> args) const {
    args.insert(args.begin(), {"--server", server.url(), "--token", token, "--poll-ms", "20"});
    return client(std::move(args));
  }

  std::string file(const std::string& name, const std::string& content) const {
    const auto path = (dir / name).string();
    std::ofstream(path, std::ios::binary) << content;
    return path;
  }
};

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == ' ')) s.pop_back();
  return s;
}

}  // namespace

TEST_CASE("login prints a token usable by later commands") {
  Fixture f;
  const auto r = client({"--server", f.server.url(), "login", "alice", "alice-pw"});
  REQUIRE(r.code == kExitOk);
  const auto token = trim(r.out);
  CHECK(token.size() == 64);
  const auto models = client({"--server", f.server.url(), "--token", token, "models"});
  CHECK(models.code == kExitOk);
  CHECK(models.out.find("base-stub-translate-translate") != std::string::npos);

  const auto bad = client({"--server", f.server.url(), "login", "alice", "wrong"});
  CHECK(bad.code == kExitFailure);
  CHECK(bad.err.find("unauthorized") != std::string::npos);
}

TEST_CASE("upload, fine-tune and predict with --wait") {
  Fixture f;
  f.server.start_worker();
  const auto data = f.file("pairs.jsonl", "{\"source\":\"hola\",\"target\":\"hello\"}\n");
  const auto up = f.run({"dataset-upload", "--file", data, "--format", "text_pairs_jsonl"});
  REQUIRE(up.code == kExitOk);
  const auto ds = trim(up.out);
  CHECK(ds.rfind("d-", 0) == 0);

  const auto ft = f.run({"finetune", "--model", "base-stub-translate-translate", "--dataset", ds,
                         "--wait"});
  REQUIRE(ft.code == kExitOk);
  const auto model = trim(ft.out);
  CHECK(model.rfind("m-", 0) == 0);

  const auto p = f.run({"predict", "--model", model, "--text", "hola", "--wait"});
  CHECK(p.code == kExitOk);
  CHECK(p.out == "hello");

  const auto input = f.file("in.txt", "hola");
  const auto out_path = (f.dir / "out.txt").string();
  CHECK(f.run({"predict", "--model", model, "--in", input, "--wait", "--out", out_path}).code ==
        kExitOk);
  std::ifstream in(out_path);
  CHECK(std::string(std::istreambuf_iterator<char>(in), {}) == "hello");

  const auto shared = f.run({"share", model});
  CHECK(trim(shared.out) == "public");
  CHECK(trim(f.run({"share", model, "--private"}).out) == "private");
}

TEST_CASE("a failed job: predict --wait and jobs-tail exit 3") {
  Fixture f;
  f.server.start_worker();
  const auto p = f.run({"predict", "--model", "base-boom-run", "--text", "x", "--wait"});
  CHECK(p.code == kExitJobFailed);
  CHECK(p.err.find("failed") != std::string::npos);
  CHECK(p.err.find("kaboom") != std::string::npos);

  const auto listed = f.run({"jobs", "--status", "failed", "--json"});
  REQUIRE(listed.code == kExitOk);
  const auto jobs = Json::parse(listed.out).at("jobs");
  REQUIRE(jobs.size() == 1);
  const auto job = jobs[0].at("job_id").get<std::string>();

  const auto tail = f.run({"jobs-tail", job});
  CHECK(tail.code == kExitJobFailed);
  CHECK(tail.out.find("about to fail") != std::string::npos);

  CHECK(trim(f.run({"restart", job}).out) == "queued");
}

TEST_CASE("jobs-tail on a successful job prints the whole log") {
  Fixture f;
  f.server.start_worker();
  const auto data = f.file("pairs.jsonl", "{\"source\":\"a\",\"target\":\"b\"}\n");
  const auto ds = trim(f.run({"dataset-upload", "--file", data, "--format", "text_pairs_jsonl"}).out);
  const auto ft = f.run({"finetune", "--model", "base-stub-translate-translate", "--dataset", ds,
                         "--json"});
  REQUIRE(ft.code == kExitOk);
  const auto job = Json::parse(ft.out).at("job_id").get<std::string>();
  const auto tail = f.run({"jobs-tail", job});
  CHECK(tail.code == kExitOk);
  CHECK(tail.out.find("merged 1 entry") != std::string::npos);
  // The log is immutable once finished.
  CHECK(f.run({"jobs-tail", job}).out == tail.out);
}

TEST_CASE("--json prints the API response verbatim") {
  Fixture f;
  const auto r = f.run({"models", "--json"});
  REQUIRE(r.code == kExitOk);
  const auto doc = Json::parse(r.out);
  CHECK(doc.at("models").size() == 3 + 1);
  CHECK(f.run({"models", "--json"}).out == r.out);
}

TEST_CASE("cancel and delete") {
  Fixture f;
  const auto job = trim(f.run({"predict", "--model", "base-stub-translate-translate", "--text",
                               "x"})
                            .out);
  CHECK(trim(f.run({"cancel", job}).out) == "cancelled");
  const auto again = f.run({"cancel", job});
  CHECK(again.code == kExitFailure);
  CHECK(again.err.find("invalid_state") != std::string::npos);

  const auto data = f.file("pairs.jsonl", "{\"source\":\"a\",\"target\":\"b\"}\n");
  const auto ds = trim(f.run({"dataset-upload", "--file", data, "--format", "text_pairs_jsonl"}).out);
  const auto del = f.run({"delete", ds});
  CHECK(del.code == kExitOk);
  CHECK(del.out.find(ds) != std::string::npos);
  CHECK(f.run({"delete", ds}).code == kExitFailure);
}

TEST_CASE("usage errors exit 2, transport errors exit 1") {
  Fixture f;
  CHECK(client({}).code == kExitUsage);
  CHECK(client({"predict"}).code == kExitUsage);
  CHECK(f.run({"predict", "--model", "m"}).code == kExitUsage);
  CHECK(f.run({"dataset-upload", "--file", "/nonexistent", "--format", "text_pairs_jsonl"}).code ==
        kExitUsage);
  CHECK(f.run({"jobs", "--status", "sleeping"}).code == kExitUsage);
  CHECK(client({"--help"}).code == kExitOk);

  const int port = testing::pick_free_port();
  const auto r = client({"--server", "http://127.0.0.1:" + std::to_string(port), "--token", "t",
                         "models"});
  CHECK(r.code == kExitFailure);
  CHECK(r.err.find("cannot reach") != std::string::npos);
  CHECK(f.run({"job", "j-missing"}).code == kExitFailure);
}
