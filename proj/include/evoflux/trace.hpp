#pragma once

#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace evoflux {

enum class EventKind {
  pop,
  push,
  discard,
  patch,
  pool_update,
  worker_count_change,
  backend_start,
  backend_end
};

std::string to_string(EventKind kind);
EventKind event_kind_from_string(const std::string& s);

/// One line of the JSON-lines event trace: {t, kind, stage, item_id, version, detail}.
struct TraceEvent {
  double t = 0.0;
  EventKind kind = EventKind::pop;
  std::string stage;
  std::optional<std::uint64_t> item_id;
  std::uint64_t version = 0;
  nlohmann::json detail = nlohmann::json::object();

  bool operator==(const TraceEvent&) const = default;
};

nlohmann::json to_json(const TraceEvent& e);
/// Throws MalformedTrace on missing or mistyped fields.
TraceEvent trace_event_from_json(const nlohmann::json& j);

/// Append-only event log shared by the pipeline, the backend and the pool
/// driver.
class Trace {
 public:
  void emit(TraceEvent e);
  std::vector<TraceEvent> events() const;
  std::size_t size() const;

  void write_jsonl(std::ostream& out) const;
  void write_jsonl(const std::string& path) const;
  static std::vector<TraceEvent> read_jsonl(std::istream& in);
  static std::vector<TraceEvent> read_jsonl(const std::string& path);

 private:
  mutable std::mutex mu_;
  std::vector<TraceEvent> events_;
};

}  // namespace evoflux
