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

#include "glyphflow/common/error.hpp"
#include "glyphflow/service/service.hpp"

namespace gf::service {

std::string to_string(JobState s) {
  switch (s) {
    case JobState::kQueued: return "queued";
    case JobState::kRunning: return "running";
    case JobState::kDone: return "done";
    case JobState::kFailed: return "failed";
  }
  return "?";
}

JobQueue::JobQueue(int workers) {
  require(workers >= 1, Errc::kConfigError, "need at least one worker");
  for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { run(); });
}

JobQueue::~JobQueue() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

std::string JobQueue::submit(std::function<std::string()> fn) {
  std::lock_guard lock(mu_);
  const std::string id = "job-" + std::to_string(++next_);
  jobs_[id].id = id;
  queue_.emplace_back(id, std::move(fn));
  cv_.notify_one();
  return id;
}

std::optional<JobStatus> JobQueue::status(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

JobStatus JobQueue::wait(const std::string& id) const {
  std::unique_lock lock(mu_);
  auto it = jobs_.find(id);
  require(it != jobs_.end(), Errc::kInvalidArgument, "unknown job " + id);
  done_cv_.wait(lock, [&] {
    return it->second.state == JobState::kDone || it->second.state == JobState::kFailed;
  });
  return it->second;
}

void JobQueue::run() {
  for (;;) {
    std::pair<std::string, std::function<std::string()>> job;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stop_ || !queue_.empty(); });
      if (stop_ && queue_.empty()) return;
      job = std::move(queue_.front());
      queue_.pop_front();
      jobs_[job.first].state = JobState::kRunning;
    }
    JobStatus done;
    done.id = job.first;
    try {
      done.result = job.second();
      done.state = JobState::kDone;
    } catch (const Error& e) {
      done.state = JobState::kFailed;
      done.error = e.what();
      done.error_code = std::string(gf::to_string(e.code()));
    } catch (const std::exception& e) {
      done.state = JobState::kFailed;
      done.error = e.what();
      done.error_code = "internal";
    }
    {
      std::lock_guard lock(mu_);
      jobs_[job.first] = std::move(done);
    }
    done_cv_.notify_all();
  }
}

}  // namespace gf::service
