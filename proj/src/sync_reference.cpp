#include <limits>
#include <memory>
#include <random>

#include "evoflux/errors.hpp"
#include "evoflux/pipeline.hpp"
#include "events.hpp"

namespace evoflux {

namespace {

/// Straight-line evolution loop: each step runs its stages back to back and
/// the next step starts only after the pool update.
class SerialLoop {
 public:
  SerialLoop(const SyntheticTask& task, ArtifactPool& pool, Backend& backend, Executor& executor, Trace& trace,
             const Budget& budget)
      : task_(task),
        pool_(pool),
        backend_(backend),
        executor_(executor),
        ev_{trace, executor, pool},
        budget_(budget),
        rng_(task.config().rng_seed) {
    for (const auto& s : task.val()) val_order_.push_back(s.sample_id);
  }

  bool finished() const { return !in_step_ && over_budget(); }

  void step() {
    in_step_ = false;
    if (over_budget()) return;
    in_step_ = true;
    const Artifact a = pool_.select_candidate(selector_, rng_);
    QueueItem select = make_item("generate", next_step_++, SelectPayload{a.id, decode_genome(a.payload)});
    ev_.pop(select, 0);
    generate_handler(
        task_, std::get<SelectPayload>(select.payload), select.step, select.item_id, backend_,
        [this, select](FeedbackPayload f) { on_feedback(select, std::move(f)); },
        [this, select](BackendOutcome o) { failed(select, o); });
  }

 private:
  bool over_budget() const {
    if (executor_.now() >= budget_.time_s) return true;
    return budget_.max_pool_updates && accepted_ >= *budget_.max_pool_updates;
  }

  QueueItem make_item(const std::string& stage, std::uint64_t step, Payload payload) {
    QueueItem item;
    item.item_id = next_id_++;
    item.stage = stage;
    item.step = step;
    item.payload = std::move(payload);
    item.origin_version = pool_.version();
    item.created_at = executor_.now();
    return item;
  }

  std::int64_t gap(const QueueItem& item) const {
    return static_cast<std::int64_t>(pool_.version() - item.origin_version);
  }

  void on_feedback(const QueueItem& from, FeedbackPayload f) {
    QueueItem item = make_item("propose", from.step, std::move(f));
    ev_.push("generate", item, true, from.item_id);
    ev_.pop(item, gap(item));
    const std::string cand = SyntheticTask::candidate_id(item.step, false);
    propose_handler(
        task_, std::get<FeedbackPayload>(item.payload), cand, pool_.version(), item.item_id, backend_,
        [this, item](CandidatePayload c) { on_candidate(item, std::move(c)); },
        [this, item](BackendOutcome o) { failed(item, o); });
  }

  void on_candidate(const QueueItem& from, CandidatePayload c) {
    QueueItem item = make_item("evaluate", from.step, std::move(c));
    ev_.push("propose", item, true, from.item_id);
    ev_.pop(item, gap(item));
    evaluate_handler(
        task_, std::get<CandidatePayload>(item.payload), val_order_, item.item_id, backend_,
        [this, item](EvaluationResult r) { on_scores(item, r); },
        [this, item](BackendOutcome o) { failed(item, o); });
  }

  void on_scores(const QueueItem& item, const EvaluationResult& r) {
    const auto& c = std::get<CandidatePayload>(item.payload);
    std::string decision = "rejected";
    if (r.score > pool_.best_score()) {
      Artifact a;
      a.id = c.artifact_id;
      a.payload = encode_genome(c.genome);
      a.parent_id = c.parent_id;
      a.created_at_version = c.created_at_version;
      pool_.insert_confirmed(std::move(a), r.score);
      ev_.pool_update(item.item_id);
      ++accepted_;
      decision = "accepted";
    }
    ev_.commit(item.item_id, c.artifact_id, decision, r.score, 0);
    step();
  }

  void failed(const QueueItem& item, const BackendOutcome& o) {
    ev_.discard(item, "handler_error", 0, o.error_message());
    step();
  }

  const SyntheticTask& task_;
  ArtifactPool& pool_;
  Backend& backend_;
  Executor& executor_;
  events::Emitter ev_;
  Budget budget_;
  BestScoreSelector selector_;
  std::mt19937_64 rng_;
  std::vector<std::string> val_order_;
  std::uint64_t next_id_ = 1;
  std::uint64_t next_step_ = 0;
  std::uint64_t accepted_ = 0;
  bool in_step_ = false;
};

}  // namespace

void run_sync_reference(const SyntheticTask& task, ArtifactPool& pool, Backend& backend, Executor& executor,
                        Trace& trace, const Budget& budget) {
  if (budget.empty()) return;
  backend.set_trace({&trace, [&pool] { return pool.version(); }});
  events::Emitter{trace, executor, pool}.snapshot();
  auto loop = std::make_shared<SerialLoop>(task, pool, backend, executor, trace, budget);
  executor.schedule_at(budget.time_s, [] {});
  loop->step();
  executor.run_until(std::numeric_limits<double>::infinity(), [&loop] { return loop->finished(); });
}

}  // namespace evoflux
