// Copyright 2026 The glyphflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "glyphflow/corpus/corpus.hpp"
#include "glyphflow/forensics/forensics.hpp"
#include "glyphflow/infer/infer.hpp"
#include "glyphflow/layout/layout.hpp"

namespace httplib {
class Server;
}

namespace gf::service {

// ---- sessions --------------------------------------------------------------------

struct SessionImages {
  GrayImage target;
  RgbImage boxmap;
  GrayImage condition;
};

struct Session {
  std::string id;
  int style = 0;
  std::vector<int> glyphs;  // reading order; the prompt is style token + glyphs
  std::uint64_t seed = 0;
  std::string boxes = "predicted";  // how the current layout was obtained
  bool decode_empty = false;
  layout::LayoutSpec layout;
  std::int64_t revision = 0;
  std::int64_t created = 0;  // unix seconds
  std::int64_t updated = 0;
};

// One directory per session. Every revision is written into its own
// subdirectory (layout.json plus PNGs); meta.json names the live revision and
// is replaced by rename, so readers never see a layout without its images.
class SessionStore {
 public:
  explicit SessionStore(std::string root);

  void put(const Session& s, const SessionImages& images);  // writes s.revision
  std::optional<Session> get(const std::string& id) const;
  SessionImages images(const Session& s) const;
  bool exists(const std::string& id) const;
  std::string new_id();
  const std::string& root() const { return root_; }

 private:
  std::string root_;
  std::mutex id_mutex_;
  std::uint64_t counter_ = 0;
  std::uint64_t salt_;
};

// ---- jobs ------------------------------------------------------------------------

enum class JobState { kQueued, kRunning, kDone, kFailed };
std::string to_string(JobState s);

struct JobStatus {
  std::string id;
  JobState state = JobState::kQueued;
  std::string result;  // JSON text once done
  std::string error;
  std::string error_code;
};

// Fixed pool of worker threads draining a FIFO of jobs.
class JobQueue {
 public:
  explicit JobQueue(int workers);
  ~JobQueue();
  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  // fn returns the result JSON; a thrown exception marks the job failed.
  std::string submit(std::function<std::string()> fn);
  std::optional<JobStatus> status(const std::string& id) const;
  // Blocks until the job reaches a terminal state.
  JobStatus wait(const std::string& id) const;
  int workers() const { return static_cast<int>(threads_.size()); }

 private:
  void run();

  mutable std::mutex mu_;
  mutable std::condition_variable cv_, done_cv_;
  std::deque<std::pair<std::string, std::function<std::string()>>> queue_;
  std::map<std::string, JobStatus> jobs_;
  std::uint64_t next_ = 0;
  bool stop_ = false;
  std::vector<std::thread> threads_;
};

// ---- service ---------------------------------------------------------------------

struct ServiceConfig {
  std::string ckpt;  // empty: no model, inference endpoints answer 503
  int port = 8787;
  int workers = 2;
  std::string store_dir = "sessions";
  std::string ui_dir;  // static files served at /, when set
  infer::IntegratorConfig integrator;
  forensics::DRSConfig drs;
};

struct Response {
  int status = 200;
  std::string body;  // JSON
};

class Service {
 public:
  explicit Service(const ServiceConfig& cfg);
  // Uses a model already in memory (tests, or a CLI that loaded it).
  Service(const ServiceConfig& cfg, std::shared_ptr<const backbone::Model<float>> model);
  ~Service();

  // Transport-independent entry point; the HTTP routes forward here.
  Response handle(const std::string& method, const std::string& path, const std::string& body);

  void bind(httplib::Server& server);
  // Blocks serving on cfg.port until stop() is called from another thread.
  void listen(const std::string& host = "127.0.0.1");
  void stop();

  bool has_model() const { return model_ != nullptr; }
  SessionStore& store() { return store_; }
  JobQueue& jobs() { return jobs_; }

 private:
  Response create_session(const std::string& body);
  Response get_session(const std::string& id);
  Response put_layout(const std::string& id, const std::string& body);
  Response inpaint(const std::string& body);
  Response drs(const std::string& body);
  Response get_job(const std::string& id);
  Response healthz();

  std::shared_ptr<std::mutex> session_lock(const std::string& id);
  corpus::CorpusConfig scaffold_config() const;

  ServiceConfig cfg_;
  corpus::GlyphAtlas atlas_;
  std::shared_ptr<const backbone::Model<float>> model_;
  std::unique_ptr<infer::Sampler> sampler_;
  SessionStore store_;
  JobQueue jobs_;
  std::mutex locks_mu_;
  std::map<std::string, std::shared_ptr<std::mutex>> locks_;
  httplib::Server* server_ = nullptr;
  std::unique_ptr<httplib::Server> owned_server_;
};

// HTTP status for a library error code.
int http_status(Errc code);

}  // namespace gf::service
