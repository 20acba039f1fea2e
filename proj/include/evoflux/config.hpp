#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evoflux/backend.hpp"
#include "evoflux/budget.hpp"
#include "evoflux/metrics.hpp"
#include "evoflux/pipeline.hpp"
#include "evoflux/workload.hpp"

namespace evoflux {

enum class RunMode { sync, async };

std::string to_string(RunMode m);
RunMode run_mode_from_string(const std::string& s);

enum class BackendKind { sim, http };

/// Sectioned key = value text: `[section]` headers, `#` comments, quoted or
/// bare values. Throws ConfigError with the line number on syntax errors.
using ConfigSections = std::map<std::string, std::map<std::string, std::string>>;
ConfigSections parse_config_text(const std::string& text);

struct OutputPaths {
  std::string dir = "out";
  std::string report = "report.json";
  std::string trace = "trace.jsonl";
  std::string score_csv = "score_curve.csv";
  std::string concurrency_csv = "concurrency_curve.csv";
  /// Pool checkpoint; empty disables it.
  std::string checkpoint;
};

struct ExperimentConfig {
  RunMode mode = RunMode::async;
  std::uint64_t seed = 42;
  Budget budget{1800.0, std::nullopt};
  PipelineTopology topology;
  bool speculative_selectable = false;
  BackendKind backend = BackendKind::sim;
  SimBackendConfig sim;
  HttpBackendConfig http;
  TaskConfig task;
  std::string task_fixture;
  OutputPaths output;

  /// Throws ConfigError on any inconsistency.
  void validate() const;
  /// The resolved configuration, as written into reports.
  nlohmann::json echo() const;
};

/// Reads and validates a config file. Unknown sections or keys are errors.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_text(const std::string& text);

/// Reference workload W1: 16 features, 20 validation samples, mb = 3,
/// backend capacity 8 with the long-tail length preset, seed 42.
ExperimentConfig w1_config(RunMode mode = RunMode::async, std::uint64_t seed = 42);

struct ExperimentResult {
  RunReport report;
  std::vector<TraceEvent> trace;
  std::optional<PipelineCounters> counters;  // async engine only
  nlohmann::json checkpoint;
};

/// Builds task, pool, executor and backend from the config, runs it, and
/// derives the report from the trace.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Writes report, trace and curve files under config.output.dir.
void write_outputs(const ExperimentConfig& config, const ExperimentResult& result);

}  // namespace evoflux
