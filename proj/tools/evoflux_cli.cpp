#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "evoflux/config.hpp"
#include "evoflux/errors.hpp"
#include "evoflux/metrics.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitBackend = 3;

struct RunArgs {
  std::string config;
  std::string mode;
  std::string policy;
  std::optional<std::uint64_t> seed;
  std::optional<double> budget;
  std::string out;
};

int cmd_run(const RunArgs& a) {
  evoflux::ExperimentConfig c = evoflux::load_config(a.config);
  if (!a.mode.empty()) c.mode = evoflux::run_mode_from_string(a.mode);
  if (!a.policy.empty()) c.topology.policy.variant = evoflux::policy_variant_from_string(a.policy);
  if (a.seed) c.seed = *a.seed;
  if (a.budget) c.budget.time_s = *a.budget;
  if (!a.out.empty()) c.output.dir = a.out;
  c.validate();
  const auto result = evoflux::run_experiment(c);
  evoflux::write_outputs(c, result);
  const auto& r = result.report;
  std::printf("%s seed=%llu: %.2f proposals/min, %.2f accepted/min, %.1f tok/s, avg inflight %.2f, score %.3f -> %.3f (%s)\n",
              evoflux::to_string(c.mode).c_str(), static_cast<unsigned long long>(c.seed), r.proposals_per_min,
              r.accepted_proposals_per_min, r.tokens_per_second, r.average_concurrency, r.initial_score,
              r.final_score, c.output.dir.c_str());
  return 0;
}

int cmd_compare(const std::string& a, const std::string& b) {
  const auto ra = evoflux::read_report(a);
  const auto rb = evoflux::read_report(b);
  std::cout << evoflux::compare_reports(ra, rb, "a", "b");
  return 0;
}

int cmd_replay(const std::string& trace, double budget, const std::string& out) {
  const auto events = evoflux::Trace::read_jsonl(trace);
  const auto report = evoflux::compute_report(events, budget);
  if (out.empty()) {
    std::cout << evoflux::to_json(report).dump(2) << '\n';
  } else {
    evoflux::write_report(report, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evoflux: asynchronous artifact-evolution experiments"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "run one experiment from a config file");
  run_cmd->add_option("--config", run.config, "experiment config file")->required();
  run_cmd->add_option("--mode", run.mode, "sync | async");
  run_cmd->add_option("--policy", run.policy, "full | guarded | reflective");
  run_cmd->add_option("--seed", run.seed, "random seed");
  run_cmd->add_option("--budget", run.budget, "time budget in seconds");
  run_cmd->add_option("--out", run.out, "output directory");

  std::string report_a, report_b;
  auto* compare_cmd = app.add_subcommand("compare", "print a speedup table for two reports");
  compare_cmd->add_option("--a", report_a, "baseline report")->required();
  compare_cmd->add_option("--b", report_b, "candidate report")->required();

  std::string trace_path, replay_out;
  double replay_budget = 0.0;
  auto* replay_cmd = app.add_subcommand("replay", "recompute a report from a trace");
  replay_cmd->add_option("--trace", trace_path, "trace .jsonl")->required();
  replay_cmd->add_option("--budget", replay_budget, "budget in seconds")->required();
  replay_cmd->add_option("--out", replay_out, "write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*compare_cmd) return cmd_compare(report_a, report_b);
    return cmd_replay(trace_path, replay_budget, replay_out);
  } catch (const evoflux::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const evoflux::BackendError& e) {
    std::fprintf(stderr, "backend error: %s\n", e.what());
    return kExitBackend;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
