#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "evoflux/artifact_pool.hpp"
#include "evoflux/backend.hpp"
#include "evoflux/budget.hpp"
#include "evoflux/control.hpp"
#include "evoflux/executor.hpp"
#include "evoflux/queue_item.hpp"
#include "evoflux/speculation.hpp"
#include "evoflux/staleness.hpp"
#include "evoflux/trace.hpp"
#include "evoflux/workload.hpp"

namespace evoflux {

struct StageSpec {
  std::string name;
  /// generate | propose | evaluate | reflect
  std::string handler_id;
  int k_init = 1;
  int k_min = 1;
  int k_max = 1;
  double alpha_spec = 1.0;
  /// Backend sub-requests per item. 0 derives it from the task (mb for
  /// generate, n_val for evaluate, 1 otherwise).
  int fan_out = 0;
  /// Input-queue bound; producers block while the queue is full.
  std::optional<std::size_t> capacity;
  /// Evaluate only: insert speculative artifacts on a winning partial score.
  bool speculative_insert = false;

  void validate() const;
};

struct PipelineOptions {
  /// Admit a new evolution step only once the previous one has left the
  /// pipeline, which turns the engine into the serial loop.
  bool barrier = false;
  bool adaptive = false;
  double control_period_s = 10.0;
  double rate_window_s = 30.0;
  bool reorder_validation = false;
  int demotion_streak = kDefaultDemotionStreak;
  /// Reflect rounds an item may take before it is dropped as stale.
  int max_reflections = 3;
};

struct PipelineTopology {
  std::vector<StageSpec> stages;
  StalenessPolicy policy;
  PipelineOptions options;

  const StageSpec* find(const std::string& name) const;
  /// Throws ConfigError when the stages do not form generate -> propose ->
  /// evaluate (plus reflect under the reflective policy) or a spec is invalid.
  void validate(const ReflectorRegistry& registry) const;
};

/// K_i = 1, alpha = 1, queues of one, barrier on: the serial configuration.
PipelineTopology sync_topology(PolicyVariant policy = PolicyVariant::full);

struct PipelineCounters {
  std::uint64_t pops = 0;
  std::uint64_t processed = 0;
  std::uint64_t discarded = 0;
  std::uint64_t patched = 0;
  std::uint64_t failed = 0;
  std::uint64_t stale = 0;
  std::uint64_t reflector_errors = 0;
  std::uint64_t releases = 0;
  std::uint64_t speculative_inserts = 0;
  std::uint64_t confirmations = 0;
  std::uint64_t rollbacks = 0;
  std::uint64_t flagged = 0;
  std::uint64_t accepted = 0;
  std::uint64_t wasted_tokens = 0;
};

struct FailedItem {
  std::uint64_t item_id = 0;
  std::string stage;
  std::string message;
};

/// Per-item record of speculative progress; one entry per handler run with
/// alpha_spec < 1.
struct SpeculationRecord {
  std::string stage;
  int releases = 0;
  int reconciles = 0;
  std::optional<ReconcileOutcome> outcome;
  std::optional<std::string> inserted_artifact;
  double released_fraction = 0.0;
};

/// Multi-stage evolution engine. Each stage owns an input queue and a number
/// of logical workers; a worker carries one item end to end. All state
/// transitions run on the executor's loop thread.
class Pipeline {
 public:
  Pipeline(PipelineTopology topology, const SyntheticTask& task, ArtifactPool& pool, Backend& backend,
           Executor& executor, Trace& trace, ReflectorRegistry registry = {});
  ~Pipeline();

  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  /// Drives the stages until the budget is spent, then lets in-flight
  /// handlers finish. The pool must already hold its seed artifact.
  void run(const Budget& budget);

  /// Throws BoundsError outside [k_min, k_max]. Lowering the count never
  /// interrupts a running handler.
  void set_worker_count(const std::string& stage, int k);
  int worker_count(const std::string& stage) const;
  int active_workers(const std::string& stage) const;

  /// Flags every queued item whose lineage contains `artifact_id` as
  /// force-stale and returns how many were flagged.
  std::size_t mark_stale_lineage(const std::string& artifact_id);

  const PipelineCounters& counters() const { return counters_; }
  const std::vector<FailedItem>& failed_items() const { return failed_; }
  const std::map<std::uint64_t, SpeculationRecord>& speculation_ledger() const { return ledger_; }
  const std::set<std::string>& rolled_back() const { return rolled_back_; }
  const PassHistory& pass_history() const { return history_; }
  const std::vector<std::string>& validation_order() const { return val_order_; }
  const PipelineTopology& topology() const { return topology_; }

  // Test hooks.
  std::uint64_t allocate_item_id() { return next_item_id_++; }
  /// Appends an item to a stage queue without a push event; assigns an id
  /// when item_id is 0.
  void enqueue(QueueItem item);
  const std::deque<QueueItem>& queue(const std::string& stage) const;
  /// Called right before a stage handler starts, with the gap seen at pop.
  void set_handler_probe(std::function<void(const QueueItem&, std::int64_t)> probe) {
    handler_probe_ = std::move(probe);
  }
  /// Called right before an item writes to the pool.
  void set_commit_probe(std::function<void(const QueueItem&, UpdateOp)> probe) {
    commit_probe_ = std::move(probe);
  }
  /// Disables the generate source so only enqueued items flow.
  void set_source_enabled(bool enabled) { source_enabled_ = enabled; }

 private:
  struct Job;
  struct Stage {
    StageSpec spec;
    int target = 1;
    int busy = 0;
    std::size_t fan_out = 1;
    std::deque<QueueItem> queue;
    // producers waiting for room: (job id, item, final flag)
    struct Blocked {
      std::uint64_t job;
      QueueItem item;
      bool final;
      std::string from;
      std::uint64_t source_item;
    };
    std::deque<Blocked> blocked;
    std::optional<RateWindow> rate;
  };

  Stage& stage(const std::string& name);
  const Stage& stage(const std::string& name) const;
  bool stopping() const;
  bool update_cap_reached() const;
  bool finished() const;
  std::size_t live_items() const;

  void pump();
  bool can_start(const Stage& s) const;
  void start_next(Stage& s);
  void start_generate_from_source(Stage& s);
  void begin_job(Stage& s, QueueItem item, std::int64_t delta);
  void start_generate(Job& job);
  void start_propose(Job& job);
  void start_evaluate(Job& job);
  void start_reflect(Job& job);

  void on_generate(std::uint64_t job_id, std::size_t index, BackendOutcome outcome);
  void on_propose(std::uint64_t job_id, BackendOutcome outcome);
  void on_evaluate(std::uint64_t job_id, std::size_t index, BackendOutcome outcome);
  void on_reflect(std::uint64_t job_id, BackendOutcome outcome);
  void finish_evaluate(Job& job);
  void finish_reflect(Job& job);

  void push(Job& job, QueueItem item, bool final);
  void enqueue_now(const std::string& from, QueueItem item, bool final, std::uint64_t source_item);
  void drain_blocked(Stage& s, bool ignore_capacity);
  void discard(const QueueItem& item, const std::string& reason, std::uint64_t wasted,
               const std::string& message = {});
  void fail(Job& job, const std::string& message);
  void handler_done(Job& job);
  void maybe_finish(std::uint64_t job_id);

  std::set<std::string> live_lineage(const std::set<std::string>& lineage) const;
  bool hits_rollback(const std::set<std::string>& lineage) const;
  std::size_t on_rollback(const std::string& artifact_id);
  void control_tick();
  void emit(EventKind kind, const std::string& stage, std::optional<std::uint64_t> item,
            nlohmann::json detail);
  void submit(Job& job, BackendRequest request, std::function<void(BackendOutcome)> done);

  PipelineTopology topology_;
  const SyntheticTask& task_;
  ArtifactPool& pool_;
  Backend& backend_;
  Executor& executor_;
  Trace& trace_;
  ReflectorRegistry registry_;
  std::shared_ptr<Reflector> reflector_;

  std::map<std::string, Stage> stages_;
  std::vector<std::string> dispatch_order_;
  std::map<std::uint64_t, std::unique_ptr<Job>> jobs_;
  std::uint64_t next_job_id_ = 1;
  std::uint64_t next_item_id_ = 1;
  std::uint64_t next_step_ = 0;
  std::uint64_t reflect_seq_ = 0;

  std::map<std::string, std::set<std::string>> lineage_of_;
  std::set<std::string> rolled_back_;
  PassHistory history_;
  std::vector<std::string> val_order_;
  BestScoreSelector selector_;
  std::mt19937_64 rng_;

  PipelineCounters counters_;
  std::vector<FailedItem> failed_;
  std::map<std::uint64_t, SpeculationRecord> ledger_;

  Budget budget_;
  bool running_ = false;
  bool source_enabled_ = true;
  bool pumping_ = false;
  bool repump_ = false;
  std::exception_ptr fatal_;

  std::function<void(const QueueItem&, std::int64_t)> handler_probe_;
  std::function<void(const QueueItem&, UpdateOp)> commit_probe_;
  std::shared_ptr<int> alive_ = std::make_shared<int>(0);
};

/// Serial reference loop: select, generate, propose, evaluate, update, each
/// stage waiting for all of its requests. Emits the same trace lines as the
/// engine. The pool must already hold its seed artifact.
void run_sync_reference(const SyntheticTask& task, ArtifactPool& pool, Backend& backend,
                        Executor& executor, Trace& trace, const Budget& budget);

}  // namespace evoflux
