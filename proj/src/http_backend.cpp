#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "evoflux/backend.hpp"
#include "evoflux/errors.hpp"

namespace evoflux {

void HttpBackendConfig::validate() const {
  if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0) {
    throw ConfigError("backend url must start with http:// or https://");
  }
  if (model.empty()) throw ConfigError("backend model must be set");
  if (!(timeout_s > 0.0)) throw ConfigError("backend timeout_s must be > 0");
  if (max_connections < 1) throw ConfigError("backend max_connections must be >= 1");
}

nlohmann::json chat_completion_body(const HttpBackendConfig& config, const BackendRequest& request) {
  return {{"model", config.model},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})},
          {"max_tokens", request.max_output_tokens},
          {"temperature", config.temperature}};
}

std::pair<std::string, int> parse_chat_completion(const std::string& body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw BackendError("chat completion body is not a JSON object");
  try {
    std::string text = j.at("choices").at(0).at("message").at("content").get<std::string>();
    int tokens = j.at("usage").at("completion_tokens").get<int>();
    return {std::move(text), tokens};
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed chat completion: ") + e.what());
  }
}

struct HttpBackend::Impl {
  struct Job {
    BackendRequest request;
    Completion done;
  };

  Impl(Executor& ex, HttpBackendConfig cfg) : executor(ex), config(std::move(cfg)) {
    if (config.api_key.empty()) {
      if (const char* env = std::getenv("EVOFLUX_API_KEY")) config.api_key = env;
    }
    for (int i = 0; i < config.max_connections; ++i) {
      threads.emplace_back([this] { worker(); });
    }
  }

  ~Impl() {
    {
      std::lock_guard lock(mu);
      stopping = true;
    }
    cv.notify_all();
    for (auto& t : threads) t.join();
  }

  void record_level_locked(double t) {
    if (!series.empty() && series.back().t == t) {
      series.back().inflight = inflight;
    } else {
      series.push_back({t, inflight});
    }
  }

  void worker() {
    for (;;) {
      Job job;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [this] { return stopping || !jobs.empty(); });
        if (stopping && jobs.empty()) return;
        job = std::move(jobs.front());
        jobs.pop_front();
        ++inflight;
        record_level_locked(executor.now());
      }
      const double started = executor.now();
      const auto req = job.request;
      executor.expect_external();
      executor.post([this, req, started] { sink->emit(started, EventKind::backend_start, req, nlohmann::json::object()); });
      BackendOutcome outcome = call(job.request, started);
      {
        std::lock_guard lock(mu);
        --inflight;
        record_level_locked(executor.now());
        if (outcome.ok()) total_tokens += static_cast<std::uint64_t>(outcome.response->output_tokens);
      }
      executor.post([this, req, outcome = std::move(outcome), done = std::move(job.done)]() mutable {
        nlohmann::json detail = nlohmann::json::object();
        if (outcome.ok()) {
          detail["output_tokens"] = outcome.response->output_tokens;
          detail["latency"] = outcome.response->latency;
        } else {
          detail["error"] = outcome.error_message();
        }
        sink->emit(executor.now(), EventKind::backend_end, req, std::move(detail));
        done(std::move(outcome));
      });
    }
  }

  BackendOutcome call(const BackendRequest& request, double started) {
    httplib::Client client(config.base_url);
    const auto timeout = std::chrono::duration<double>(config.timeout_s);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    httplib::Headers headers;
    if (!config.api_key.empty()) headers.emplace("Authorization", "Bearer " + config.api_key);
    const std::string body = chat_completion_body(config, request).dump();
    auto res = client.Post("/v1/chat/completions", headers, body, "application/json");
    try {
      if (!res) {
        const auto err = res.error();
        if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout) {
          throw Timeout("request " + request.request_id + " timed out");
        }
        throw BackendUnavailable("request " + request.request_id + " failed: " + httplib::to_string(err));
      }
      if (res->status >= 500 || res->status == 429) {
        throw BackendUnavailable("backend returned HTTP " + std::to_string(res->status));
      }
      if (res->status != 200) throw BackendError("backend returned HTTP " + std::to_string(res->status));
      auto [text, tokens] = parse_chat_completion(res->body);
      BackendResponse resp;
      resp.request_id = request.request_id;
      resp.output_tokens = std::clamp(tokens, 0, request.max_output_tokens);
      resp.latency = std::max(executor.now() - started, 1e-9);
      resp.text = std::move(text);
      return {std::move(resp), nullptr};
    } catch (...) {
      return {std::nullopt, std::current_exception()};
    }
  }

  Executor& executor;
  HttpBackendConfig config;
  const TraceSink* sink = nullptr;
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Job> jobs;
  bool stopping = false;
  std::uint64_t next_handle = 0;
  int inflight = 0;
  std::uint64_t total_tokens = 0;
  ConcurrencySeries series{{0.0, 0}};
  std::vector<std::thread> threads;
};

HttpBackend::HttpBackend(Executor& executor, HttpBackendConfig config) {
  config.validate();
  impl_ = std::make_unique<Impl>(executor, std::move(config));
  impl_->sink = &sink_;
}

HttpBackend::~HttpBackend() = default;

RequestHandle HttpBackend::submit(BackendRequest request, Completion done) {
  std::lock_guard lock(impl_->mu);
  RequestHandle h{impl_->next_handle++};
  impl_->executor.expect_external();
  impl_->jobs.push_back({std::move(request), std::move(done)});
  impl_->cv.notify_one();
  return h;
}

ConcurrencySeries HttpBackend::concurrency_trace() const {
  std::lock_guard lock(impl_->mu);
  return impl_->series;
}

std::uint64_t HttpBackend::total_output_tokens() const {
  std::lock_guard lock(impl_->mu);
  return impl_->total_tokens;
}

}  // namespace evoflux
