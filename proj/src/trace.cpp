#include "evoflux/trace.hpp"

#include <array>
#include <fstream>
#include <istream>
#include <ostream>
#include <utility>

#include "evoflux/errors.hpp"

namespace evoflux {

namespace {

constexpr std::array<std::pair<EventKind, const char*>, 8> kKindNames{{
    {EventKind::pop, "pop"},
    {EventKind::push, "push"},
    {EventKind::discard, "discard"},
    {EventKind::patch, "patch"},
    {EventKind::pool_update, "pool_update"},
    {EventKind::worker_count_change, "worker_count_change"},
    {EventKind::backend_start, "backend_start"},
    {EventKind::backend_end, "backend_end"},
}};

}  // namespace

std::string to_string(EventKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "pop";
}

EventKind event_kind_from_string(const std::string& s) {
  for (const auto& [k, name] : kKindNames) {
    if (s == name) return k;
  }
  throw MalformedTrace("unknown event kind '" + s + "'");
}

nlohmann::json to_json(const TraceEvent& e) {
  nlohmann::json j;
  j["t"] = e.t;
  j["kind"] = to_string(e.kind);
  j["stage"] = e.stage;
  j["item_id"] = e.item_id ? nlohmann::json(*e.item_id) : nlohmann::json();
  j["version"] = e.version;
  j["detail"] = e.detail;
  return j;
}

TraceEvent trace_event_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw MalformedTrace("trace line is not an object");
  try {
    TraceEvent e;
    e.t = j.at("t").get<double>();
    e.kind = event_kind_from_string(j.at("kind").get<std::string>());
    e.stage = j.at("stage").get<std::string>();
    const auto& id = j.at("item_id");
    if (!id.is_null()) e.item_id = id.get<std::uint64_t>();
    e.version = j.at("version").get<std::uint64_t>();
    e.detail = j.value("detail", nlohmann::json::object());
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw MalformedTrace(std::string("bad trace event: ") + ex.what());
  }
}

void Trace::emit(TraceEvent e) {
  std::lock_guard lock(mu_);
  events_.push_back(std::move(e));
}

std::vector<TraceEvent> Trace::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::size_t Trace::size() const {
  std::lock_guard lock(mu_);
  return events_.size();
}

void Trace::write_jsonl(std::ostream& out) const {
  std::lock_guard lock(mu_);
  for (const auto& e : events_) out << to_json(e).dump() << '\n';
}

void Trace::write_jsonl(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot open trace file " + path);
  write_jsonl(out);
}

std::vector<TraceEvent> Trace::read_jsonl(std::istream& in) {
  std::vector<TraceEvent> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw MalformedTrace("line " + std::to_string(lineno) + " is not JSON");
    out.push_back(trace_event_from_json(j));
  }
  return out;
}

std::vector<TraceEvent> Trace::read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace file " + path);
  return read_jsonl(in);
}

}  // namespace evoflux
