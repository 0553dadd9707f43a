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


#include "e2e.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <stdexcept>
#include <thread>

#include <httplib.h>

#include "annolab/postcorrect.hpp"
#include "synthetic_ocr.hpp"

namespace annolab::testing {

int pick_free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw std::runtime_error("cannot bind an ephemeral port");
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

// ---------------------------------------------------------------------------

ServeProcess::ServeProcess(std::string binary, std::filesystem::path data_dir,
                           std::vector<std::string> extra_args)
    : binary_(std::move(binary)),
      data_dir_(std::move(data_dir)),
      extra_(std::move(extra_args)),
      port_(pick_free_port()) {}

ServeProcess::~ServeProcess() {
  if (pid_ > 0) kill_hard();
}

std::string ServeProcess::url() const { return "http://127.0.0.1:" + std::to_string(port_); }

std::filesystem::path ServeProcess::log_path() const {
  return data_dir_.parent_path() / (data_dir_.filename().string() + ".serve.log");
}

void ServeProcess::start() {
  std::vector<std::string> args = {binary_, "serve", "--data-dir", data_dir_.string(), "--addr",
                                   "127.0.0.1:" + std::to_string(port_)};
  args.insert(args.end(), extra_.begin(), extra_.end());
  const auto log = log_path();
  const pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd >= 0) {
      ::dup2(fd, STDOUT_FILENO);
      ::dup2(fd, STDERR_FILENO);
    }
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    ::execv(binary_.c_str(), argv.data());
    ::_exit(127);
  }
  pid_ = pid;
  ++starts_;
  const bool up = poll_until(
      [&] {
        int status = 0;
        if (::waitpid(pid_, &status, WNOHANG) == pid_) {
          pid_ = -1;
          throw std::runtime_error("serve exited during startup; see " + log.string());
        }
        return Rest(url()).get("/api/meta").status == 200;
      },
      20.0, 50);
  if (!up) throw std::runtime_error("serve did not come up; see " + log.string());
}

void ServeProcess::kill_hard() {
  if (pid_ <= 0) return;
  ::kill(pid_, SIGKILL);
  int status = 0;
  ::waitpid(pid_, &status, 0);
  pid_ = -1;
}

int ServeProcess::stop() {
  if (pid_ <= 0) return -1;
  ::kill(pid_, SIGTERM);
  int status = 0;
  ::waitpid(pid_, &status, 0);
  pid_ = -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

// ---------------------------------------------------------------------------

Json HttpReply::json() const {
  auto doc = Json::parse(body, nullptr, false);
  return doc.is_discarded() ? Json() : doc;
}

Rest::Rest(std::string url, std::string token) : url_(std::move(url)), token_(std::move(token)) {}

namespace {

HttpReply convert(const httplib::Result& res) {
  if (!res) return {0, httplib::to_string(res.error())};
  return {res->status, res->body};
}

httplib::Client client_for(const std::string& url, const std::string& token) {
  httplib::Client c(url);
  if (!token.empty()) c.set_bearer_token_auth(token);
  c.set_connection_timeout(2, 0);
  c.set_read_timeout(60, 0);
  c.set_write_timeout(60, 0);
  return c;
}

}  // namespace

HttpReply Rest::get(const std::string& path) const {
  auto c = client_for(url_, token_);
  return convert(c.Get(path));
}

HttpReply Rest::post(const std::string& path, const Json& body) const {
  return post_raw(path, body.dump(), "application/json");
}

HttpReply Rest::post_raw(const std::string& path, const std::string& body,
                         const std::string& content_type) const {
  auto c = client_for(url_, token_);
  return convert(c.Post(path, body, content_type));
}

HttpReply Rest::patch(const std::string& path, const Json& body) const {
  auto c = client_for(url_, token_);
  return convert(c.Patch(path, body.dump(), "application/json"));
}

HttpReply Rest::del(const std::string& path) const {
  auto c = client_for(url_, token_);
  return convert(c.Delete(path));
}

bool poll_until(const std::function<bool()>& done, double timeout_s, int interval_ms) {
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
  while (std::chrono::steady_clock::now() < deadline) {
    if (done()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(interval_ms));
  }
  return done();
}

// ---------------------------------------------------------------------------

namespace {

struct LoopFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw LoopFailure(what);
}

void expect_status(const HttpReply& r, int status, const std::string& what) {
  if (r.status != status) {
    throw LoopFailure(what + ": expected HTTP " + std::to_string(status) + ", got " +
                      std::to_string(r.status) + " " + r.body.substr(0, 200));
  }
}

/// Polls a job until it is terminal; returns its final record.
Json wait_job(const Rest& api, const std::string& job_id, double timeout_s) {
  Json job;
  const bool done = poll_until(
      [&] {
        const auto r = api.get("/api/jobs/" + job_id);
        if (r.status != 200) return false;
        job = r.json();
        return is_terminal(parse_enum<JobStatus>(job.at("status").get<std::string>()));
      },
      timeout_s, 100);
  expect(done, "job " + job_id + " did not finish within " + std::to_string(timeout_s) + " s");
  return job;
}

}  // namespace

LoopReport run_rest_loop(const std::function<std::string()>& url,
                         const std::function<void(int step)>& between_steps,
                         const std::string& admin_user, const std::string& admin_pass,
                         std::uint64_t corpus_seed) {
  const auto started = std::chrono::steady_clock::now();
  LoopReport report;

  OcrCorpusConfig cfg;
  cfg.seed = corpus_seed;
  OcrCorpus corpus(cfg);
  const auto train = corpus.pages(10);
  const auto held_out = corpus.pages(1).front();

  // State shared by the steps and their re-verification.
  std::string alice_token, bob_token, dataset_id, train_job, model_id, predict_job, result;
  const std::string base = "base-postcorrect-correct";
  auto anon = [&] { return Rest(url()); };
  auto alice = [&] { return Rest(url(), alice_token); };
  auto bob = [&] { return Rest(url(), bob_token); };

  struct Step {
    std::string name;
    std::function<void()> run;
    std::function<void()> verify;
  };
  std::vector<Step> steps;

  steps.push_back(
      {"create users",
       [&] {
         const auto login = anon().post("/api/auth/token",
                                        {{"username", admin_user}, {"password", admin_pass}});
         expect_status(login, 200, "admin login");
         const Rest admin(url(), login.json().at("token").get<std::string>());
         for (const auto& [name, pass] :
              {std::pair{"alice", "alice-pw"}, std::pair{"bob", "bob-pw"}}) {
           expect_status(admin.post("/api/users", {{"username", name}, {"password", pass}}), 201,
                         std::string("create ") + name);
         }
         const auto a = anon().post("/api/auth/token",
                                    {{"username", "alice"}, {"password", "alice-pw"}});
         expect_status(a, 200, "alice login");
         alice_token = a.json().at("token").get<std::string>();
         const auto b = anon().post("/api/auth/token", {{"username", "bob"}, {"password", "bob-pw"}});
         expect_status(b, 200, "bob login");
         bob_token = b.json().at("token").get<std::string>();
       },
       [&] {
         const auto me = alice().get("/api/me");
         expect_status(me, 200, "alice /api/me");
         expect(me.json().at("username") == "alice", "alice identity");
         expect_status(bob().get("/api/me"), 200, "bob /api/me");
       }});

  steps.push_back(
      {"upload dataset",
       [&] {
         const auto r = alice().post("/api/datasets", {{"format", "text_pairs_jsonl"},
                                                       {"task_name", "correct"},
                                                       {"content", to_jsonl(train)}});
         expect_status(r, 201, "dataset upload");
         dataset_id = r.json().at("dataset_id").get<std::string>();
       },
       [&] {
         const auto r = alice().get("/api/datasets/" + dataset_id);
         expect_status(r, 200, "dataset visible to owner");
         expect(r.json().at("item_count") == 10, "dataset has 10 items");
       }});

  steps.push_back(
      {"launch fine-tune",
       [&] {
         const auto r =
             alice().post("/api/models/" + base + "/finetune", {{"dataset_id", dataset_id}});
         expect_status(r, 202, "finetune");
         train_job = r.json().at("job_id").get<std::string>();
         model_id = r.json().at("new_model_id").get<std::string>();
       },
       [&] {
         const auto r = alice().get("/api/models/" + model_id);
         expect_status(r, 200, "child model visible");
         expect(r.json().at("parent_model_id") == base, "child records its parent");
         const auto lineage = alice().get("/api/models/" + model_id + "/lineage");
         expect_status(lineage, 200, "lineage");
         expect(lineage.json().at("lineage") == Json::array({model_id, base}), "lineage chain");
         expect_status(alice().get("/api/jobs/" + train_job), 200, "training job visible");
       }});

  steps.push_back(
      {"wait for training",
       [&] {
         const auto job = wait_job(alice(), train_job, 60.0);
         expect(job.at("status") == "succeeded",
                "training ended " + job.at("status").get<std::string>() + ": " +
                    job.value("failure_reason", Json("")).dump());
       },
       [&] {
         const auto r = alice().get("/api/models/" + model_id);
         expect_status(r, 200, "trained model");
         expect(r.json().at("status") == "ready", "model ready");
         const auto logs = alice().get("/api/jobs/" + train_job + "/logs?offset=0");
         expect_status(logs, 200, "training log");
         expect(!logs.json().at("payload_b64").get<std::string>().empty(), "training log nonempty");
       }});

  steps.push_back(
      {"predict held-out page",
       [&] {
         const auto r = alice().post("/api/models/" + model_id + "/predict",
                                     {{"inline_input", held_out.obs}});
         expect_status(r, 202, "predict");
         predict_job = r.json().at("job_id").get<std::string>();
         const auto job = wait_job(alice(), predict_job, 60.0);
         expect(job.at("status") == "succeeded", "predict job succeeded");
         const auto res = alice().get("/api/jobs/" + predict_job + "/result");
         expect_status(res, 200, "predict result");
         result = res.body;
         report.cer_before = postcorrect::cer(held_out.obs, held_out.truth);
         report.cer_after = postcorrect::cer(result, held_out.truth);
         expect(report.cer_after <= 0.5 * report.cer_before,
                "CER " + std::to_string(report.cer_before) + " -> " +
                    std::to_string(report.cer_after) + " is less than a 50% relative drop");
       },
       [&] {
         const auto res = alice().get("/api/jobs/" + predict_job + "/result");
         expect_status(res, 200, "stored predict result");
         expect(res.body == result, "predict result unchanged");
       }});

  steps.push_back(
      {"share model",
       [&] {
         expect_status(alice().patch("/api/models/" + model_id, {{"visibility", "public"}}), 200,
                       "share");
       },
       [&] {
         const auto r = bob().get("/api/models/" + model_id);
         expect_status(r, 200, "public model visible to bob");
         expect(r.json().at("visibility") == "public", "model public");
         expect(!r.json().contains("dataset_ids"), "dataset ids hidden from bob");
       }});

  std::string bob_job;
  steps.push_back(
      {"second user",
       [&] {
         const auto r = bob().post("/api/models/" + model_id + "/predict",
                                   {{"inline_input", held_out.obs}});
         expect(r.status / 100 == 2, "bob predict accepted, got " + std::to_string(r.status));
         bob_job = r.json().at("job_id").get<std::string>();
         const auto job = wait_job(bob(), bob_job, 60.0);
         expect(job.at("status") == "succeeded", "bob's predict succeeded");
         const auto res = bob().get("/api/jobs/" + bob_job + "/result");
         expect_status(res, 200, "bob result");
         expect(res.body == result, "bob gets the same correction");
       },
       [&] {
         expect_status(bob().get("/api/datasets/" + dataset_id), 404, "bob dataset");
         expect_status(bob().get("/api/jobs/" + train_job + "/logs?offset=0"), 404, "bob logs");
         expect_status(bob().get("/api/jobs/" + predict_job), 404, "bob sees alice's job");
         expect_status(bob().get("/api/jobs/" + bob_job), 200, "bob's own job");
       }});

  steps.push_back(
      {"delete model",
       [&] { expect_status(alice().del("/api/models/" + model_id), 200, "delete model"); },
       [&] {
         expect_status(alice().get("/api/models/" + model_id), 404, "deleted model");
         expect_status(alice().get("/api/jobs/" + train_job), 404, "deleted training job");
         expect_status(alice().get("/api/jobs/" + predict_job), 404, "deleted predict job");
         expect_status(alice().get("/api/jobs/" + train_job + "/logs?offset=0"), 404,
                       "deleted training log");
         expect_status(alice().get("/api/jobs/" + predict_job + "/logs?offset=0"), 404,
                       "deleted predict log");
         expect_status(alice().get("/api/datasets/" + dataset_id), 404, "deleted dataset");
         expect_status(bob().get("/api/models/" + model_id), 404, "deleted model for bob");
       }});

  try {
    for (std::size_t i = 0; i < steps.size(); ++i) {
      try {
        steps[i].run();
      } catch (const std::exception& e) {
        throw LoopFailure("step '" + steps[i].name + "': " + e.what());
      }
      between_steps(static_cast<int>(i));
      // Deletion supersedes what earlier steps left behind.
      const bool deleted = steps[i].name == "delete model";
      for (std::size_t k = 0; k <= i; ++k) {
        if (deleted && k > 0 && k < i) continue;
        try {
          steps[k].verify();
        } catch (const std::exception& e) {
          throw LoopFailure("after step '" + steps[i].name + "', check of '" + steps[k].name +
                            "': " + e.what());
        }
      }
      report.steps_completed = static_cast<int>(i) + 1;
    }
    report.passed = true;
  } catch (const std::exception& e) {
    report.failure = e.what();
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

struct MockHttpServer::Impl {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> requests{0};
};

MockHttpServer::MockHttpServer(Handler handler) : impl_(std::make_unique<Impl>()) {
  impl_->server.Post(".*", [this, handler](const httplib::Request& req, httplib::Response& res) {
    ++impl_->requests;
    const HttpReply reply = handler(req.path, req.body);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  });
  impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
  if (impl_->port <= 0) throw std::runtime_error("mock server cannot bind");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

MockHttpServer::~MockHttpServer() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string MockHttpServer::url() const {
  return "http://127.0.0.1:" + std::to_string(impl_->port);
}

int MockHttpServer::requests() const { return impl_->requests.load(); }

}  // namespace annolab::testing
