#pragma once

#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "evoflux/executor.hpp"
#include "evoflux/trace.hpp"

namespace evoflux {

struct BackendRequest {
  std::string request_id;
  std::string stage;
  std::optional<std::uint64_t> item_id;
  int prompt_tokens = 0;
  int max_output_tokens = 4096;
  std::string seed_material;
  /// Chat message sent by the HTTP backend; ignored by the simulator.
  std::string prompt;
};

struct BackendResponse {
  std::string request_id;
  int output_tokens = 0;
  double latency = 0.0;
  std::string text;
};

/// Either a response or the error that replaced it (BackendUnavailable,
/// Timeout or another BackendError).
struct BackendOutcome {
  std::optional<BackendResponse> response;
  std::exception_ptr error;

  bool ok() const { return response.has_value(); }
  [[noreturn]] void rethrow() const;
  std::string error_message() const;
};

using Completion = std::function<void(BackendOutcome)>;

struct RequestHandle {
  std::uint64_t id = 0;
};

struct ConcurrencyPoint {
  double t = 0.0;
  int inflight = 0;

  bool operator==(const ConcurrencyPoint&) const = default;
};

/// Piecewise-constant series: each point holds its value until the next one.
using ConcurrencySeries = std::vector<ConcurrencyPoint>;

/// Time-weighted mean of the series over [t0, t1].
double average_concurrency(const ConcurrencySeries& series, double t0, double t1);
int max_concurrency(const ConcurrencySeries& series);

/// Where backends report their events. `version` supplies the pool version
/// stamped on backend_start/backend_end lines.
struct TraceSink {
  Trace* trace = nullptr;
  std::function<std::uint64_t()> version;

  void emit(double t, EventKind kind, const BackendRequest& req, nlohmann::json detail) const;
};

/// Shared LLM-serving endpoint. Completions are delivered on the executor's
/// loop thread.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual RequestHandle submit(BackendRequest request, Completion done) = 0;
  virtual ConcurrencySeries concurrency_trace() const = 0;
  virtual std::uint64_t total_output_tokens() const = 0;
  virtual void set_trace(TraceSink sink) = 0;
};

struct LognormalLengths {
  double mu;
  double sigma;
};
struct ParetoLengths {
  double scale;
  double shape;
};
struct FixedLengths {
  int n;
};
using LengthDist = std::variant<LognormalLengths, ParetoLengths, FixedLengths>;

/// Synthetic long-tail preset: lognormal with median 200 tokens and
/// p99/p50 = 10.
LengthDist long_tail_preset();

struct SimBackendConfig {
  int capacity = 8;
  double token_rate = 50.0;  // tokens/s per in-flight request
  LengthDist length_dist = FixedLengths{100};
  std::uint64_t rng_seed = 0;
  double overhead_s = 0.0;  // constant per-request prefill cost
  /// Test hook: requests matching the predicate complete with BackendError.
  std::function<bool(const BackendRequest&)> fail_if;

  void validate() const;
};

/// Output length for a request, a pure function of (config, request_id).
int sample_output_tokens(const SimBackendConfig& config, const BackendRequest& request);

/// Capacity-limited backend on a virtual (or wall) clock. Requests wait in a
/// FIFO for one of `capacity` slots and, once admitted, finish after
/// overhead + output_tokens / token_rate seconds.
class SimBackend final : public Backend {
 public:
  SimBackend(Executor& executor, SimBackendConfig config);

  RequestHandle submit(BackendRequest request, Completion done) override;
  ConcurrencySeries concurrency_trace() const override { return series_; }
  std::uint64_t total_output_tokens() const override { return total_tokens_; }
  void set_trace(TraceSink sink) override { sink_ = std::move(sink); }

  int inflight() const { return inflight_; }
  std::size_t waiting() const { return waiting_.size(); }
  std::uint64_t submitted() const { return next_id_; }
  const SimBackendConfig& config() const { return config_; }

 private:
  struct Waiting {
    BackendRequest request;
    Completion done;
    double submitted_at;
  };

  void admit();
  void record_level();

  Executor& executor_;
  SimBackendConfig config_;
  TraceSink sink_;
  std::deque<Waiting> waiting_;
  int inflight_ = 0;
  std::uint64_t next_id_ = 0;
  std::uint64_t total_tokens_ = 0;
  ConcurrencySeries series_{{0.0, 0}};
};

struct HttpBackendConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model = "default";
  std::string api_key;  // falls back to $EVOFLUX_API_KEY when empty
  double timeout_s = 120.0;
  int max_connections = 16;
  double temperature = 0.7;

  void validate() const;
};

/// OpenAI-compatible chat-completions client (POST /v1/chat/completions).
/// At most `max_connections` requests are outstanding; the rest queue FIFO.
class HttpBackend final : public Backend {
 public:
  HttpBackend(Executor& executor, HttpBackendConfig config);
  ~HttpBackend() override;

  RequestHandle submit(BackendRequest request, Completion done) override;
  ConcurrencySeries concurrency_trace() const override;
  std::uint64_t total_output_tokens() const override;
  void set_trace(TraceSink sink) override { sink_ = std::move(sink); }

 private:
  struct Impl;
  TraceSink sink_;
  std::unique_ptr<Impl> impl_;
};

/// Request body for one chat completion.
nlohmann::json chat_completion_body(const HttpBackendConfig& config, const BackendRequest& request);

/// Extracts (text, completion_tokens) from a chat-completions response body.
/// Throws BackendError when the body does not follow the schema.
std::pair<std::string, int> parse_chat_completion(const std::string& body);

}  // namespace evoflux
