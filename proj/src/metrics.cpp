#include "evoflux/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "evoflux/errors.hpp"

namespace evoflux {

namespace {

const nlohmann::json& field(const TraceEvent& e, const char* key) {
  auto it = e.detail.find(key);
  if (it == e.detail.end()) {
    throw MalformedTrace(to_string(e.kind) + " event at t=" + std::to_string(e.t) + " lacks detail." + key);
  }
  return *it;
}

bool flag(const TraceEvent& e, const char* key) {
  auto it = e.detail.find(key);
  return it != e.detail.end() && it->is_boolean() && it->get<bool>();
}

std::uint64_t count_field(const TraceEvent& e, const char* key) {
  auto it = e.detail.find(key);
  if (it == e.detail.end()) return 0;
  if (!it->is_number_integer() || it->get<std::int64_t>() < 0) {
    throw MalformedTrace(std::string("detail.") + key + " must be a non-negative integer");
  }
  return it->get<std::uint64_t>();
}

double per_second(double n, double budget) { return budget > 0.0 ? n / budget : 0.0; }

}  // namespace

RunReport compute_report(const std::vector<TraceEvent>& events, double budget_s) {
  if (!(budget_s >= 0.0)) throw MalformedTrace("budget must be >= 0");
  RunReport r;
  r.budget_s = budget_s;
  double last_t = -std::numeric_limits<double>::infinity();
  bool have_score = false;
  int inflight = 0;
  std::map<std::string, std::int64_t> queue_len;
  double gap_sum = 0.0;
  std::uint64_t gap_n = 0;

  auto bump_queue = [&](const std::string& stage, int d) {
    auto& n = queue_len[stage];
    n = std::max<std::int64_t>(0, n + d);
    r.max_queue_length[stage] = std::max<std::uint64_t>(r.max_queue_length[stage], static_cast<std::uint64_t>(n));
  };
  auto add_score = [&](double t, double score) {
    if (!have_score) {
      r.initial_score = score;
      have_score = true;
    }
    if (r.score_curve.empty() || score > r.score_curve.back().score) r.score_curve.push_back({t, score});
    r.final_score = std::max(r.final_score, score);
  };
  auto add_level = [&](double t) {
    if (inflight < 0) throw MalformedTrace("backend_end without a matching backend_start");
    if (!r.concurrency_curve.empty() && r.concurrency_curve.back().t == t) {
      r.concurrency_curve.back().inflight = inflight;
    } else {
      r.concurrency_curve.push_back({t, inflight});
    }
  };
  r.concurrency_curve.push_back({0.0, 0});

  for (const TraceEvent& e : events) {
    if (e.t < last_t) throw MalformedTrace("event times go backwards at t=" + std::to_string(e.t));
    last_t = e.t;
    if (e.t > budget_s) break;
    switch (e.kind) {
      case EventKind::pop: {
        ++r.pops;
        const auto& d = field(e, "delta");
        if (!d.is_number_integer()) throw MalformedTrace("pop detail.delta must be an integer");
        const bool forced = flag(e, "force_stale");
        const std::int64_t delta = d.get<std::int64_t>();
        if (e.stage != "reflect" && (delta != 0 || forced)) ++r.stale_count;
        if (!forced && delta != std::numeric_limits<std::int64_t>::max()) {
          gap_sum += static_cast<double>(delta);
          ++gap_n;
        }
        if (e.stage != "generate" || queue_len[e.stage] > 0) bump_queue(e.stage, -1);
        break;
      }
      case EventKind::push: {
        const std::string from = field(e, "from").get<std::string>();
        const std::string to = field(e, "to").get<std::string>();
        r.wasted_tokens += count_field(e, "wasted_tokens");
        if (flag(e, "routed")) {
          ++r.stale_count;
          bump_queue(to, +1);
          break;
        }
        if (flag(e, "final")) ++r.processed;
        if (from == "propose") ++r.proposals;
        if (to != "pool") bump_queue(to, +1);
        break;
      }
      case EventKind::discard: {
        const std::string reason = field(e, "reason").get<std::string>();
        if (reason == "handler_error") {
          ++r.failed_count;
        } else {
          ++r.discard_count;
        }
        r.wasted_tokens += count_field(e, "wasted_tokens");
        break;
      }
      case EventKind::patch:
        ++r.patch_count;
        bump_queue(field(e, "return_stage").get<std::string>(), +1);
        break;
      case EventKind::pool_update: {
        const std::string op = field(e, "op").get<std::string>();
        if (op == "insert_confirmed" || op == "confirm") ++r.accepted;
        if (op == "insert_speculative") ++r.speculative_inserts;
        if (op == "rollback") ++r.rollbacks;
        add_score(e.t, field(e, "best_score").get<double>());
        break;
      }
      case EventKind::backend_start:
        ++inflight;
        add_level(e.t);
        break;
      case EventKind::backend_end:
        --inflight;
        if (!field(e, "output_tokens").is_number_integer()) {
          throw MalformedTrace("backend_end detail.output_tokens must be an integer");
        }
        r.total_output_tokens += count_field(e, "output_tokens");
        add_level(e.t);
        break;
      case EventKind::worker_count_change:
        break;
    }
  }

  r.tokens_per_second = per_second(static_cast<double>(r.total_output_tokens), budget_s);
  r.proposals_per_min = per_second(static_cast<double>(r.proposals) * 60.0, budget_s);
  r.accepted_proposals_per_min = per_second(static_cast<double>(r.accepted) * 60.0, budget_s);
  r.mean_version_gap = gap_n ? gap_sum / static_cast<double>(gap_n) : 0.0;
  r.average_concurrency = average_concurrency(r.concurrency_curve, 0.0, budget_s);
  r.max_concurrency = evoflux::max_concurrency(r.concurrency_curve);
  return r;
}

double normalized_evolution_rate(const RunReport& report, const RunReport& baseline) {
  const double base = baseline.final_score - baseline.initial_score;
  if (!(base > 0.0)) throw UndefinedBaseline("baseline run did not improve its score");
  return (report.final_score - report.initial_score) / base;
}

std::string format_normalized_rate(const RunReport& report, const RunReport& baseline) {
  try {
    std::ostringstream out;
    out << std::fixed << std::setprecision(3) << normalized_evolution_rate(report, baseline);
    return out.str();
  } catch (const UndefinedBaseline&) {
    return "--";
  }
}

nlohmann::json to_json(const RunReport& r) {
  nlohmann::json score = nlohmann::json::array();
  for (const auto& p : r.score_curve) score.push_back({p.t, p.score});
  nlohmann::json conc = nlohmann::json::array();
  for (const auto& p : r.concurrency_curve) conc.push_back({p.t, p.inflight});
  return {{"budget_s", r.budget_s},
          {"tokens_per_second", r.tokens_per_second},
          {"proposals_per_min", r.proposals_per_min},
          {"accepted_proposals_per_min", r.accepted_proposals_per_min},
          {"total_output_tokens", r.total_output_tokens},
          {"proposals", r.proposals},
          {"accepted", r.accepted},
          {"wasted_tokens", r.wasted_tokens},
          {"pops", r.pops},
          {"processed", r.processed},
          {"discard_count", r.discard_count},
          {"patch_count", r.patch_count},
          {"stale_count", r.stale_count},
          {"failed_count", r.failed_count},
          {"speculative_inserts", r.speculative_inserts},
          {"rollbacks", r.rollbacks},
          {"mean_version_gap", r.mean_version_gap},
          {"max_queue_length", r.max_queue_length},
          {"initial_score", r.initial_score},
          {"final_score", r.final_score},
          {"score_curve", score},
          {"concurrency_curve", conc},
          {"average_concurrency", r.average_concurrency},
          {"max_concurrency", r.max_concurrency},
          {"seed", r.seed},
          {"config_echo", r.config_echo},
          {"generated_at", r.generated_at}};
}

RunReport run_report_from_json(const nlohmann::json& j) {
  try {
    RunReport r;
    r.budget_s = j.at("budget_s").get<double>();
    r.tokens_per_second = j.at("tokens_per_second").get<double>();
    r.proposals_per_min = j.at("proposals_per_min").get<double>();
    r.accepted_proposals_per_min = j.at("accepted_proposals_per_min").get<double>();
    r.total_output_tokens = j.value("total_output_tokens", std::uint64_t{0});
    r.proposals = j.value("proposals", std::uint64_t{0});
    r.accepted = j.value("accepted", std::uint64_t{0});
    r.wasted_tokens = j.value("wasted_tokens", std::uint64_t{0});
    r.pops = j.value("pops", std::uint64_t{0});
    r.processed = j.value("processed", std::uint64_t{0});
    r.discard_count = j.value("discard_count", std::uint64_t{0});
    r.patch_count = j.value("patch_count", std::uint64_t{0});
    r.stale_count = j.value("stale_count", std::uint64_t{0});
    r.failed_count = j.value("failed_count", std::uint64_t{0});
    r.speculative_inserts = j.value("speculative_inserts", std::uint64_t{0});
    r.rollbacks = j.value("rollbacks", std::uint64_t{0});
    r.mean_version_gap = j.value("mean_version_gap", 0.0);
    if (j.contains("max_queue_length")) r.max_queue_length = j.at("max_queue_length").get<std::map<std::string, std::uint64_t>>();
    r.initial_score = j.value("initial_score", 0.0);
    r.final_score = j.value("final_score", 0.0);
    for (const auto& p : j.value("score_curve", nlohmann::json::array())) r.score_curve.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    r.concurrency_curve.clear();
    for (const auto& p : j.value("concurrency_curve", nlohmann::json::array())) r.concurrency_curve.push_back({p.at(0).get<double>(), p.at(1).get<int>()});
    r.average_concurrency = j.value("average_concurrency", 0.0);
    r.max_concurrency = j.value("max_concurrency", 0);
    r.seed = j.value("seed", std::uint64_t{0});
    r.config_echo = j.value("config_echo", nlohmann::json::object());
    r.generated_at = j.value("generated_at", std::string());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

std::string report_fingerprint(const RunReport& r) {
  nlohmann::json j = to_json(r);
  j.erase("generated_at");
  return j.dump();
}

void write_report(const RunReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write report " + path);
  out << to_json(r).dump(2) << '\n';
}

RunReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open report " + path);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError("report " + path + " is not JSON");
  return run_report_from_json(j);
}

namespace {

// shortest text that reads back to the same double
std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void write_score_csv(const RunReport& r, std::ostream& out) {
  out << "t,score\n";
  for (const auto& p : r.score_curve) out << shortest(p.t) << ',' << shortest(p.score) << '\n';
}

void write_concurrency_csv(const RunReport& r, std::ostream& out) {
  out << "t,inflight\n";
  for (const auto& p : r.concurrency_curve) out << shortest(p.t) << ',' << p.inflight << '\n';
}

std::string compare_reports(const RunReport& a, const RunReport& b, const std::string& label_a,
                            const std::string& label_b) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %14s %14s %10s\n", "metric", label_a.c_str(), label_b.c_str(), "b/a");
  out << line;
  auto row = [&](const char* name, double va, double vb) {
    char ratio[32];
    if (va != 0.0) {
      std::snprintf(ratio, sizeof ratio, "%.2fx", vb / va);
    } else {
      std::snprintf(ratio, sizeof ratio, "--");
    }
    std::snprintf(line, sizeof line, "%-28s %14.3f %14.3f %10s\n", name, va, vb, ratio);
    out << line;
  };
  row("tokens_per_second", a.tokens_per_second, b.tokens_per_second);
  row("proposals_per_min", a.proposals_per_min, b.proposals_per_min);
  row("accepted_proposals_per_min", a.accepted_proposals_per_min, b.accepted_proposals_per_min);
  row("average_concurrency", a.average_concurrency, b.average_concurrency);
  row("final_score", a.final_score, b.final_score);
  row("wasted_tokens", static_cast<double>(a.wasted_tokens), static_cast<double>(b.wasted_tokens));
  std::snprintf(line, sizeof line, "%-28s %14s %14s\n", "normalized_evolution_rate", format_normalized_rate(a, a).c_str(),
                format_normalized_rate(b, a).c_str());
  out << line;
  return out.str();
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace evoflux
