#include <algorithm>
#include <cmath>
#include <random>

#include "evoflux/backend.hpp"
#include "evoflux/errors.hpp"

namespace evoflux {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

void BackendOutcome::rethrow() const {
  if (error) std::rethrow_exception(error);
  throw BackendError("backend outcome carries neither response nor error");
}

std::string BackendOutcome::error_message() const {
  if (!error) return {};
  try {
    std::rethrow_exception(error);
  } catch (const std::exception& e) {
    return e.what();
  } catch (...) {
    return "unknown backend error";
  }
}

double average_concurrency(const ConcurrencySeries& series, double t0, double t1) {
  if (t1 <= t0 || series.empty()) return 0.0;
  double area = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double start = std::max(series[i].t, t0);
    const double end = std::min(i + 1 < series.size() ? series[i + 1].t : t1, t1);
    if (end > start) area += series[i].inflight * (end - start);
  }
  return area / (t1 - t0);
}

int max_concurrency(const ConcurrencySeries& series) {
  int m = 0;
  for (const auto& p : series) m = std::max(m, p.inflight);
  return m;
}

void TraceSink::emit(double t, EventKind kind, const BackendRequest& req,
                     nlohmann::json detail) const {
  if (!trace) return;
  TraceEvent e;
  e.t = t;
  e.kind = kind;
  e.stage = req.stage;
  e.item_id = req.item_id;
  e.version = version ? version() : 0;
  detail["request_id"] = req.request_id;
  e.detail = std::move(detail);
  trace->emit(std::move(e));
}

LengthDist long_tail_preset() {
  // z(0.99) of the standard normal
  constexpr double kZ99 = 2.3263478740408408;
  return LognormalLengths{std::log(200.0), std::log(10.0) / kZ99};
}

void SimBackendConfig::validate() const {
  if (capacity < 1) throw ConfigError("backend capacity must be >= 1");
  if (!(token_rate > 0.0)) throw ConfigError("backend token_rate must be > 0");
  if (overhead_s < 0.0) throw ConfigError("backend overhead_s must be >= 0");
  std::visit(
      [](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, LognormalLengths>) {
          if (!(d.sigma >= 0.0)) throw ConfigError("lognormal sigma must be >= 0");
        } else if constexpr (std::is_same_v<D, ParetoLengths>) {
          if (!(d.scale > 0.0) || !(d.shape > 0.0)) throw ConfigError("pareto scale and shape must be > 0");
        } else {
          if (d.n < 1) throw ConfigError("fixed length must be >= 1");
        }
      },
      length_dist);
}

int sample_output_tokens(const SimBackendConfig& config, const BackendRequest& request) {
  std::mt19937_64 rng(splitmix64(config.rng_seed ^ fnv1a(request.request_id)));
  const double raw = std::visit(
      [&](const auto& d) -> double {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, LognormalLengths>) {
          return std::lognormal_distribution<double>(d.mu, d.sigma)(rng);
        } else if constexpr (std::is_same_v<D, ParetoLengths>) {
          // inverse CDF on u in (0, 1]
          const double u = 1.0 - std::uniform_real_distribution<double>(0.0, 1.0)(rng);
          return d.scale / std::pow(u, 1.0 / d.shape);
        } else {
          return static_cast<double>(d.n);
        }
      },
      config.length_dist);
  const double capped = std::min(raw, static_cast<double>(std::max(1, request.max_output_tokens)));
  return std::max(1, static_cast<int>(std::lround(capped)));
}

SimBackend::SimBackend(Executor& executor, SimBackendConfig config)
    : executor_(executor), config_(std::move(config)) {
  config_.validate();
}

RequestHandle SimBackend::submit(BackendRequest request, Completion done) {
  RequestHandle handle{next_id_++};
  if (config_.fail_if && config_.fail_if(request)) {
    auto err = std::make_exception_ptr(BackendError("injected failure for " + request.request_id));
    executor_.schedule_after(0.0, [done = std::move(done), err] { done(BackendOutcome{std::nullopt, err}); });
    return handle;
  }
  waiting_.push_back(Waiting{std::move(request), std::move(done), executor_.now()});
  admit();
  return handle;
}

void SimBackend::record_level() {
  const double t = executor_.now();
  if (!series_.empty() && series_.back().t == t) {
    series_.back().inflight = inflight_;
    if (series_.size() >= 2 && series_[series_.size() - 2].inflight == inflight_) series_.pop_back();
  } else if (series_.empty() || series_.back().inflight != inflight_) {
    series_.push_back({t, inflight_});
  }
}

void SimBackend::admit() {
  while (inflight_ < config_.capacity && !waiting_.empty()) {
    Waiting w = std::move(waiting_.front());
    waiting_.pop_front();
    const int tokens = sample_output_tokens(config_, w.request);
    const double service = config_.overhead_s + tokens / config_.token_rate;
    ++inflight_;
    record_level();
    sink_.emit(executor_.now(), EventKind::backend_start, w.request,
               {{"queued_s", executor_.now() - w.submitted_at}});
    executor_.schedule_after(service, [this, w = std::move(w), tokens]() mutable {
      --inflight_;
      total_tokens_ += static_cast<std::uint64_t>(tokens);
      record_level();
      BackendResponse resp;
      resp.request_id = w.request.request_id;
      resp.output_tokens = tokens;
      resp.latency = executor_.now() - w.submitted_at;
      resp.text = "sim:" + w.request.request_id;
      sink_.emit(executor_.now(), EventKind::backend_end, w.request,
                 {{"output_tokens", tokens}, {"latency", resp.latency}});
      admit();
      w.done(BackendOutcome{std::move(resp), nullptr});
    });
  }
}

}  // namespace evoflux
