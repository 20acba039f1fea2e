#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "evoflux/backend.hpp"
#include "evoflux/trace.hpp"

namespace evoflux {

struct ScorePoint {
  double t = 0.0;
  double score = 0.0;

  bool operator==(const ScorePoint&) const = default;
};

/// Summary of one run, derived from its event trace alone. Only events with
/// t <= budget count, so work that drains after the budget is excluded.
struct RunReport {
  double budget_s = 0.0;
  double tokens_per_second = 0.0;
  double proposals_per_min = 0.0;
  double accepted_proposals_per_min = 0.0;
  std::uint64_t total_output_tokens = 0;
  std::uint64_t proposals = 0;
  std::uint64_t accepted = 0;
  std::uint64_t wasted_tokens = 0;
  std::uint64_t pops = 0;
  std::uint64_t processed = 0;
  std::uint64_t discard_count = 0;
  std::uint64_t patch_count = 0;
  std::uint64_t stale_count = 0;
  std::uint64_t failed_count = 0;
  std::uint64_t speculative_inserts = 0;
  std::uint64_t rollbacks = 0;
  double mean_version_gap = 0.0;
  std::map<std::string, std::uint64_t> max_queue_length;
  double initial_score = 0.0;
  double final_score = 0.0;
  std::vector<ScorePoint> score_curve;
  ConcurrencySeries concurrency_curve;
  double average_concurrency = 0.0;
  int max_concurrency = 0;
  std::uint64_t seed = 0;
  nlohmann::json config_echo = nlohmann::json::object();
  /// Wall-clock creation time; the only field allowed to differ between
  /// reruns of a simulated experiment.
  std::string generated_at;
};

/// Throws MalformedTrace when events go back in time or lack the fields the
/// report needs.
RunReport compute_report(const std::vector<TraceEvent>& events, double budget_s);

/// (final - initial) / (baseline final - baseline initial). Throws
/// UndefinedBaseline when the baseline did not improve.
double normalized_evolution_rate(const RunReport& report, const RunReport& baseline);

/// The rate with three decimals, or "--" when the baseline is flat.
std::string format_normalized_rate(const RunReport& report, const RunReport& baseline);

nlohmann::json to_json(const RunReport& r);
RunReport run_report_from_json(const nlohmann::json& j);

/// Report JSON with `generated_at` removed, for reproducibility checks.
std::string report_fingerprint(const RunReport& r);

void write_report(const RunReport& r, const std::string& path);
RunReport read_report(const std::string& path);
void write_score_csv(const RunReport& r, std::ostream& out);
void write_concurrency_csv(const RunReport& r, std::ostream& out);

/// Side-by-side table of two reports with b/a ratios.
std::string compare_reports(const RunReport& a, const RunReport& b, const std::string& label_a = "a",
                            const std::string& label_b = "b");

/// Current UTC time as ISO-8601.
std::string utc_timestamp();

}  // namespace evoflux
