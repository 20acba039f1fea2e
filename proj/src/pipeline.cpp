#include "evoflux/pipeline.hpp"

#include <algorithm>
#include <limits>

#include "evoflux/errors.hpp"
#include "events.hpp"

namespace evoflux {

namespace {

constexpr const char* kKnownStages[] = {"generate", "propose", "evaluate", "reflect"};

Artifact to_artifact(const CandidatePayload& c) {
  Artifact a;
  a.id = c.artifact_id;
  a.payload = encode_genome(c.genome);
  a.kind = ArtifactKind::synthetic;
  a.parent_id = c.parent_id;
  a.created_at_version = c.created_at_version;
  return a;
}

}  // namespace

void StageSpec::validate() const {
  const std::string where = "stage '" + name + "': ";
  if (k_min < 1) throw ConfigError(where + "k_min must be >= 1");
  if (!(k_min <= k_init && k_init <= k_max)) throw ConfigError(where + "need k_min <= k_init <= k_max");
  if (!(alpha_spec > 0.0 && alpha_spec <= 1.0)) throw ConfigError(where + "alpha_spec must lie in (0, 1]");
  if (fan_out < 0) throw ConfigError(where + "fan_out must be >= 1");
  if (capacity && *capacity == 0) throw ConfigError(where + "capacity must be >= 1");
  if (speculative_insert && handler_id != "evaluate") {
    throw ConfigError(where + "speculative_insert applies to the evaluate stage only");
  }
}

const StageSpec* PipelineTopology::find(const std::string& name) const {
  for (const auto& s : stages) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

void PipelineTopology::validate(const ReflectorRegistry& registry) const {
  std::set<std::string> seen;
  for (const auto& s : stages) {
    s.validate();
    if (std::find(std::begin(kKnownStages), std::end(kKnownStages), s.handler_id) == std::end(kKnownStages)) {
      throw ConfigError("stage '" + s.name + "' has unknown handler '" + s.handler_id + "'");
    }
    if (s.name != s.handler_id) {
      throw ConfigError("stage '" + s.name + "' must be named after its handler '" + s.handler_id + "'");
    }
    if (!seen.insert(s.name).second) throw ConfigError("duplicate stage '" + s.name + "'");
  }
  for (const char* required : {"generate", "propose", "evaluate"}) {
    if (!seen.count(required)) throw ConfigError(std::string("missing stage '") + required + "'");
  }
  const bool reflective = policy.variant == PolicyVariant::reflective;
  if (reflective && !seen.count("reflect")) throw ConfigError("the reflective policy needs a reflect stage");
  if (!reflective && seen.count("reflect")) throw ConfigError("a reflect stage needs the reflective policy");
  policy.validate(registry);
  if (!(options.control_period_s > 0.0)) throw ConfigError("control_period_s must be > 0");
  if (!(options.rate_window_s > 0.0)) throw ConfigError("rate_window_s must be > 0");
  if (options.demotion_streak < 1) throw ConfigError("demotion streak w must be >= 1");
  if (options.max_reflections < 1) throw ConfigError("max_reflections must be >= 1");
}

PipelineTopology sync_topology(PolicyVariant policy) {
  PipelineTopology t;
  for (const char* name : kKnownStages) {
    if (std::string(name) == "reflect" && policy != PolicyVariant::reflective) continue;
    StageSpec s;
    s.name = name;
    s.handler_id = name;
    s.capacity = 1;
    t.stages.push_back(s);
  }
  t.policy.variant = policy;
  t.options.barrier = true;
  return t;
}

struct Pipeline::Job {
  std::uint64_t id = 0;
  std::string stage;
  QueueItem item;
  std::int64_t delta = 0;
  std::size_t remaining = 0;
  std::optional<ReleaseTracker> tracker;
  std::optional<std::string> error;
  std::uint64_t tokens = 0;
  std::uint64_t tokens_after_insert = 0;
  int pending_pushes = 0;
  bool done = false;
  std::vector<std::size_t> completed;  // sub-request indices in completion order
  std::size_t released_count = 0;
  // generate
  SelectPayload select;
  std::vector<const TaskSample*> batch;
  std::vector<std::optional<Trajectory>> trajectories;
  // propose
  std::string candidate_id;
  PoolVersion at_version = 0;
  // evaluate
  std::vector<std::string> order;
  std::vector<bool> outcomes;
  std::optional<std::string> inserted;
  // reflect
  std::optional<BackendResponse> response;
};

Pipeline::Pipeline(PipelineTopology topology, const SyntheticTask& task, ArtifactPool& pool, Backend& backend,
                   Executor& executor, Trace& trace, ReflectorRegistry registry)
    : topology_(std::move(topology)),
      task_(task),
      pool_(pool),
      backend_(backend),
      executor_(executor),
      trace_(trace),
      registry_(std::move(registry)),
      rng_(task.config().rng_seed) {
  topology_.validate(registry_);
  if (topology_.policy.variant == PolicyVariant::reflective) reflector_ = registry_.find(topology_.policy.reflector_id);
  for (const char* name : kKnownStages) {
    const StageSpec* spec = topology_.find(name);
    if (!spec) continue;
    Stage s;
    s.spec = *spec;
    s.target = spec->k_init;
    std::size_t derived = 1;
    if (s.spec.handler_id == "generate") derived = static_cast<std::size_t>(task_.config().mb);
    if (s.spec.handler_id == "evaluate") derived = task_.val().size();
    if (spec->fan_out > 0 && s.spec.handler_id != "reflect" && static_cast<std::size_t>(spec->fan_out) != derived) {
      throw ConfigError("stage '" + s.spec.name + "' fan_out " + std::to_string(spec->fan_out) +
                        " does not match the task (" + std::to_string(derived) + ")");
    }
    s.fan_out = spec->fan_out > 0 ? static_cast<std::size_t>(spec->fan_out) : derived;
    s.rate.emplace(topology_.options.rate_window_s);
    stages_.emplace(name, std::move(s));
    dispatch_order_.push_back(name);
  }
  for (const auto& sample : task_.val()) {
    val_order_.push_back(sample.sample_id);
    history_.register_sample(sample.sample_id);
  }
}

Pipeline::~Pipeline() = default;

Pipeline::Stage& Pipeline::stage(const std::string& name) {
  auto it = stages_.find(name);
  if (it == stages_.end()) throw InvariantViolation("no stage named '" + name + "'");
  return it->second;
}

const Pipeline::Stage& Pipeline::stage(const std::string& name) const {
  auto it = stages_.find(name);
  if (it == stages_.end()) throw InvariantViolation("no stage named '" + name + "'");
  return it->second;
}

const std::deque<QueueItem>& Pipeline::queue(const std::string& name) const { return stage(name).queue; }

void Pipeline::enqueue(QueueItem item) {
  if (item.item_id == 0) item.item_id = next_item_id_++;
  next_item_id_ = std::max(next_item_id_, item.item_id + 1);
  stage(item.stage).queue.push_back(std::move(item));
}

int Pipeline::worker_count(const std::string& name) const { return stage(name).target; }
int Pipeline::active_workers(const std::string& name) const { return stage(name).busy; }

void Pipeline::emit(EventKind kind, const std::string& stage_name, std::optional<std::uint64_t> item,
                    nlohmann::json detail) {
  events::Emitter{trace_, executor_, pool_}.emit(kind, stage_name, item, std::move(detail));
}

void Pipeline::set_worker_count(const std::string& name, int k) {
  Stage& s = stage(name);
  if (k < s.spec.k_min || k > s.spec.k_max) {
    throw BoundsError("worker count " + std::to_string(k) + " for stage '" + name + "' outside [" +
                      std::to_string(s.spec.k_min) + ", " + std::to_string(s.spec.k_max) + "]");
  }
  if (k == s.target) return;
  emit(EventKind::worker_count_change, name, std::nullopt, {{"from", s.target}, {"to", k}});
  s.target = k;
  pump();
}

bool Pipeline::stopping() const {
  if (executor_.now() >= budget_.time_s) return true;
  return update_cap_reached();
}

bool Pipeline::update_cap_reached() const {
  return budget_.max_pool_updates && counters_.accepted >= *budget_.max_pool_updates;
}

// Past the time budget, items already queued still run to completion so the
// step in progress finishes; the update cap stops everything at once.
bool Pipeline::finished() const {
  if (!stopping() || !jobs_.empty()) return false;
  if (update_cap_reached()) return true;
  return std::all_of(stages_.begin(), stages_.end(), [](const auto& kv) { return kv.second.queue.empty(); });
}

std::size_t Pipeline::live_items() const {
  std::size_t n = jobs_.size();
  for (const auto& [name, s] : stages_) n += s.queue.size() + s.blocked.size();
  return n;
}

void Pipeline::run(const Budget& budget) {
  budget_ = budget;
  if (budget.empty()) return;
  backend_.set_trace({&trace_, [this] { return pool_.version(); }});
  running_ = true;
  events::Emitter{trace_, executor_, pool_}.snapshot();
  std::weak_ptr<int> alive = alive_;
  executor_.schedule_at(budget.time_s, [this, alive] {
    if (!alive.expired()) pump();
  });
  if (topology_.options.adaptive) {
    executor_.schedule_after(topology_.options.control_period_s, [this, alive] {
      if (!alive.expired()) control_tick();
    });
  }
  pump();
  executor_.run_until(std::numeric_limits<double>::infinity(),
                      [this] { return fatal_ != nullptr || finished(); });
  running_ = false;
  if (fatal_) std::rethrow_exception(fatal_);
}

void Pipeline::pump() {
  if (!running_) return;
  if (pumping_) {
    repump_ = true;
    return;
  }
  pumping_ = true;
  do {
    repump_ = false;
    if (stopping()) {
      for (const auto& name : dispatch_order_) drain_blocked(stage(name), update_cap_reached());
      if (!update_cap_reached()) {
        for (const auto& name : dispatch_order_) {
          Stage& s = stage(name);
          while (!fatal_ && s.busy < s.target && !s.queue.empty()) start_next(s);
        }
      }
    } else {
      for (const auto& name : dispatch_order_) {
        Stage& s = stage(name);
        while (!fatal_ && can_start(s)) start_next(s);
      }
    }
  } while (repump_ && !fatal_);
  pumping_ = false;
}

bool Pipeline::can_start(const Stage& s) const {
  if (s.busy >= s.target) return false;
  if (!s.queue.empty()) return true;
  if (s.spec.handler_id != "generate" || !source_enabled_) return false;
  return !topology_.options.barrier || live_items() == 0;
}

void Pipeline::start_next(Stage& s) {
  if (s.queue.empty()) {
    start_generate_from_source(s);
    return;
  }
  QueueItem item = std::move(s.queue.front());
  s.queue.pop_front();
  const events::Emitter ev{trace_, executor_, pool_};
  const std::int64_t delta = version_gap(item, pool_);
  const auto& policy = topology_.policy;

  if (s.spec.handler_id == "reflect") {
    ev.pop(item, delta);
    ++counters_.pops;
    begin_job(s, std::move(item), delta);
  } else if (policy.variant == PolicyVariant::reflective && delta != 0) {
    ++counters_.stale;
    if (item.reflections >= topology_.options.max_reflections) {
      ev.pop(item, delta);
      ++counters_.pops;
      discard(item, "stale", item.spent_tokens);
    } else {
      // routed straight to the reflect queue; the reflect worker pops it
      item.return_stage = s.spec.name;
      item.stage = "reflect";
      emit(EventKind::push, s.spec.name, item.item_id,
           {{"from", s.spec.name},
            {"to", "reflect"},
            {"final", false},
            {"routed", true},
            {"tentative", item.tentative},
            {"supplementary", item.supplementary},
            {"delta", delta}});
      stage("reflect").queue.push_back(std::move(item));
    }
  } else {
    ev.pop(item, delta);
    ++counters_.pops;
    if (delta != 0) ++counters_.stale;
    const GateDecision g = gate(item, pool_, policy);
    if (g.outcome == GateOutcome::discard) {
      discard(item, item.force_stale ? "force_stale" : "stale", item.spent_tokens);
    } else {
      begin_job(s, std::move(item), delta);
    }
  }
  drain_blocked(s, false);
}

void Pipeline::start_generate_from_source(Stage& s) {
  const Artifact a = pool_.select_candidate(selector_, rng_);
  QueueItem item;
  item.item_id = next_item_id_++;
  item.stage = s.spec.name;
  item.step = next_step_++;
  item.payload = SelectPayload{a.id, decode_genome(a.payload)};
  item.origin_version = pool_.version();
  if (auto it = lineage_of_.find(a.id); it != lineage_of_.end()) item.spec_lineage = live_lineage(it->second);
  item.created_at = executor_.now();
  events::Emitter{trace_, executor_, pool_}.pop(item, 0);
  ++counters_.pops;
  begin_job(s, std::move(item), 0);
}

void Pipeline::begin_job(Stage& s, QueueItem item, std::int64_t delta) {
  auto owned = std::make_unique<Job>();
  Job& job = *owned;
  job.id = next_job_id_++;
  job.stage = s.spec.name;
  job.item = std::move(item);
  job.delta = delta;
  jobs_.emplace(job.id, std::move(owned));
  ++s.busy;
  if (handler_probe_ && s.spec.handler_id != "reflect") handler_probe_(job.item, delta);
  try {
    if (s.spec.handler_id == "generate") {
      start_generate(job);
    } else if (s.spec.handler_id == "propose") {
      start_propose(job);
    } else if (s.spec.handler_id == "evaluate") {
      start_evaluate(job);
    } else {
      start_reflect(job);
    }
  } catch (const Error& e) {
    if (job.remaining > 0) {
      // some sub-requests went out; let them land before failing
      job.error = e.what();
    } else {
      fail(job, e.what());
    }
  }
}

void Pipeline::submit(Job& job, BackendRequest request, std::function<void(BackendOutcome)> done) {
  ++job.remaining;
  std::weak_ptr<int> alive = alive_;
  backend_.submit(std::move(request), [this, alive, done = std::move(done)](BackendOutcome o) {
    if (alive.expired()) return;
    try {
      done(std::move(o));
    } catch (...) {
      if (!fatal_) fatal_ = std::current_exception();
    }
  });
}

namespace {

/// Records a failed sub-request on the job; an unreachable endpoint also
/// aborts the run.
template <class JobT>
bool absorb(JobT& job, const BackendOutcome& o, std::exception_ptr& fatal) {
  if (o.ok()) {
    job.tokens += static_cast<std::uint64_t>(o.response->output_tokens);
    return true;
  }
  const std::string context = "item " + std::to_string(job.item.item_id) + " at stage " + job.stage + ": ";
  if (!job.error) job.error = o.error_message();
  try {
    o.rethrow();
  } catch (const BackendUnavailable& e) {
    if (!fatal) fatal = std::make_exception_ptr(BackendUnavailable(context + e.what()));
  } catch (...) {
  }
  return false;
}

}  // namespace

void Pipeline::start_generate(Job& job) {
  const auto* sel = std::get_if<SelectPayload>(&job.item.payload);
  if (!sel) throw HandlerError("generate expects a selected artifact payload");
  job.select = *sel;
  job.batch = task_.minibatch(job.item.step);
  job.trajectories.assign(job.batch.size(), std::nullopt);
  job.tracker.emplace(stage(job.stage).spec.alpha_spec, job.batch.size());
  if (job.tracker->speculative()) ledger_[job.item.item_id].stage = job.stage;
  const std::uint64_t id = job.id;
  for (std::size_t i = 0; i < job.batch.size(); ++i) {
    submit(job, task_.generate_request(job.item.step, *job.batch[i], job.item.item_id),
           [this, id, i](BackendOutcome o) { on_generate(id, i, std::move(o)); });
  }
}

void Pipeline::on_generate(std::uint64_t job_id, std::size_t index, BackendOutcome outcome) {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return;
  Job& job = *it->second;
  --job.remaining;
  if (absorb(job, outcome, fatal_)) {
    job.trajectories[index] = task_.run_sample(job.select.genome, *job.batch[index]);
    job.completed.push_back(index);
  }
  auto feedback = [&](const std::vector<std::size_t>& indices) {
    FeedbackPayload f;
    f.parent_id = job.select.artifact_id;
    f.parent = job.select.genome;
    for (std::size_t i : indices) f.trajectories.push_back(*job.trajectories[i]);
    f.corrections = task_.corrections(f.trajectories);
    return f;
  };
  auto next_item = [&](Payload p, std::uint64_t spent) {
    QueueItem n;
    n.stage = "propose";
    n.step = job.item.step;
    n.payload = std::move(p);
    n.spec_lineage = job.item.spec_lineage;
    n.spent_tokens = job.item.spent_tokens + spent;
    return n;
  };

  if (job.tracker->on_complete() && !job.error) {
    SpeculationRecord& rec = ledger_[job.item.item_id];
    ++rec.releases;
    rec.released_fraction = job.tracker->released_fraction();
    ++counters_.releases;
    job.released_count = job.completed.size();
    job.tokens_after_insert = job.tokens;  // generate reuses this as tokens-at-release
    QueueItem n = next_item(feedback(job.completed), job.tokens);
    n.tentative = true;
    push(job, std::move(n), false);
  }

  if (job.remaining == 0) {
    if (job.error) {
      if (job.released_count > 0) {
        SpeculationRecord& rec = ledger_[job.item.item_id];
        ++rec.reconciles;
        rec.outcome = ReconcileOutcome::finalized;
      }
      fail(job, *job.error);
    } else if (job.released_count > 0) {
      std::set<std::size_t> sent(job.completed.begin(), job.completed.begin() + static_cast<std::ptrdiff_t>(job.released_count));
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < job.batch.size(); ++i) {
        if (!sent.count(i)) rest.push_back(i);
      }
      SpeculationRecord& rec = ledger_[job.item.item_id];
      ++rec.reconciles;
      rec.outcome = ReconcileOutcome::finalized;
      QueueItem n = next_item(feedback(rest), job.tokens - job.tokens_after_insert);
      n.supplementary = true;
      push(job, std::move(n), true);
      handler_done(job);
    } else {
      std::vector<std::size_t> all(job.batch.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      push(job, next_item(feedback(all), job.tokens), true);
      handler_done(job);
    }
  }
  pump();
}

void Pipeline::start_propose(Job& job) {
  const auto* fb = std::get_if<FeedbackPayload>(&job.item.payload);
  if (!fb) throw HandlerError("propose expects a feedback payload");
  job.candidate_id = SyntheticTask::candidate_id(job.item.step, job.item.supplementary);
  job.at_version = pool_.version();
  const std::uint64_t id = job.id;
  submit(job, task_.propose_request(job.candidate_id, job.item.item_id),
         [this, id](BackendOutcome o) { on_propose(id, std::move(o)); });
}

void Pipeline::on_propose(std::uint64_t job_id, BackendOutcome outcome) {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return;
  Job& job = *it->second;
  --job.remaining;
  absorb(job, outcome, fatal_);
  if (job.error) {
    fail(job, *job.error);
  } else {
    QueueItem n;
    n.stage = "evaluate";
    n.step = job.item.step;
    n.payload = task_.propose(std::get<FeedbackPayload>(job.item.payload), job.candidate_id, job.at_version);
    n.spec_lineage = job.item.spec_lineage;
    n.spent_tokens = job.item.spent_tokens + job.tokens;
    push(job, std::move(n), true);
    handler_done(job);
  }
  pump();
}

void Pipeline::start_evaluate(Job& job) {
  const auto* cand = std::get_if<CandidatePayload>(&job.item.payload);
  if (!cand) throw HandlerError("evaluate expects a candidate payload");
  const StageSpec& spec = stage(job.stage).spec;
  if (topology_.options.reorder_validation) {
    val_order_ = reorder_validation(history_, val_order_, spec.alpha_spec, topology_.options.demotion_streak);
  }
  job.order = val_order_;
  job.outcomes.assign(job.order.size(), false);
  job.tracker.emplace(spec.speculative_insert ? spec.alpha_spec : 1.0, job.order.size());
  if (job.tracker->speculative()) ledger_[job.item.item_id].stage = job.stage;
  const std::uint64_t id = job.id;
  for (std::size_t i = 0; i < job.order.size(); ++i) {
    submit(job, task_.evaluate_request(cand->artifact_id, task_.val_sample(job.order[i]), job.item.item_id),
           [this, id, i](BackendOutcome o) { on_evaluate(id, i, std::move(o)); });
  }
}

void Pipeline::on_evaluate(std::uint64_t job_id, std::size_t index, BackendOutcome outcome) {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return;
  Job& job = *it->second;
  --job.remaining;
  const std::uint64_t before = job.tokens;
  const auto& cand = std::get<CandidatePayload>(job.item.payload);
  if (absorb(job, outcome, fatal_)) {
    if (job.inserted) job.tokens_after_insert += job.tokens - before;
    job.outcomes[index] = task_.passes(cand.genome, task_.val_sample(job.order[index]));
    job.completed.push_back(index);
  }

  if (job.tracker->on_complete() && !job.error) {
    SpeculationRecord& rec = ledger_[job.item.item_id];
    ++rec.releases;
    rec.released_fraction = job.tracker->released_fraction();
    ++counters_.releases;
    PartialScore partial;
    partial.evaluated = job.completed.size();
    for (std::size_t i : job.completed) partial.passed += job.outcomes[i] ? 1 : 0;
    if (!hits_rollback(job.item.spec_lineage) && speculative_eval_gate(partial, pool_) == SpecGate::insert) {
      if (commit_probe_) commit_probe_(job.item, UpdateOp::insert_speculative);
      try {
        pool_.insert_speculative(to_artifact(cand), partial.score());
        job.inserted = cand.artifact_id;
        auto lineage = live_lineage(job.item.spec_lineage);
        lineage.insert(cand.artifact_id);
        lineage_of_[cand.artifact_id] = std::move(lineage);
        rec.inserted_artifact = cand.artifact_id;
        ++counters_.speculative_inserts;
        events::Emitter{trace_, executor_, pool_}.pool_update(job.item.item_id);
      } catch (const GateFailed&) {
        // best score moved between the gate read and the insert; hold
      }
    }
  }

  if (job.remaining == 0) finish_evaluate(job);
  pump();
}

void Pipeline::finish_evaluate(Job& job) {
  const events::Emitter ev{trace_, executor_, pool_};
  const auto& cand = std::get<CandidatePayload>(job.item.payload);
  const bool tracked = ledger_.count(job.item.item_id) != 0;
  auto settle = [&](ReconcileOutcome o) {
    if (!tracked) return;
    SpeculationRecord& rec = ledger_[job.item.item_id];
    ++rec.reconciles;
    rec.outcome = o;
  };

  if (job.error) {
    if (job.inserted) {
      reconcile(pool_, *job.inserted, -1.0, [this](const std::string& id) { return on_rollback(id); });
      ev.pool_update(job.item.item_id);
      settle(ReconcileOutcome::rolled_back);
    } else {
      settle(ReconcileOutcome::finalized);
    }
    fail(job, *job.error);
    return;
  }

  if (topology_.options.reorder_validation) {
    for (std::size_t i = 0; i < job.order.size(); ++i) history_.record_validation_outcome(job.order[i], job.outcomes[i]);
  }
  std::vector<std::pair<std::string, bool>> outcomes;
  for (std::size_t i = 0; i < job.order.size(); ++i) outcomes.emplace_back(job.order[i], job.outcomes[i]);
  const double full = task_.weighted_score(outcomes);

  if (job.inserted) {
    const ReconcileOutcome o =
        reconcile(pool_, *job.inserted, full, [this](const std::string& id) { return on_rollback(id); });
    ev.pool_update(job.item.item_id);
    settle(o);
    std::uint64_t wasted = 0;
    if (o == ReconcileOutcome::confirmed) {
      ++counters_.confirmations;
      ++counters_.accepted;
    } else {
      wasted = job.tokens_after_insert;
      counters_.wasted_tokens += wasted;
    }
    ev.commit(job.item.item_id, cand.artifact_id, to_string(o), full, wasted);
    ++counters_.processed;
    stage(job.stage).rate->record(executor_.now());
    handler_done(job);
    return;
  }

  settle(ReconcileOutcome::finalized);
  if (hits_rollback(job.item.spec_lineage)) {
    discard(job.item, "lineage_rolled_back", job.item.spent_tokens + job.tokens);
    handler_done(job);
    return;
  }
  std::string decision = "rejected";
  if (full > pool_.best_score()) {
    if (commit_probe_) commit_probe_(job.item, UpdateOp::insert_confirmed);
    pool_.insert_confirmed(to_artifact(cand), full);
    lineage_of_[cand.artifact_id] = live_lineage(job.item.spec_lineage);
    ev.pool_update(job.item.item_id);
    ++counters_.accepted;
    decision = "accepted";
  }
  ev.commit(job.item.item_id, cand.artifact_id, decision, full, 0);
  ++counters_.processed;
  stage(job.stage).rate->record(executor_.now());
  handler_done(job);
}

void Pipeline::start_reflect(Job& job) {
  const std::string prefix = "r" + std::to_string(++reflect_seq_) + "/reflect/";
  const auto updates = pool_.updates_between(job.item.origin_version, pool_.version());
  std::optional<BackendRequest> custom;
  try {
    custom = reflector_->request(job.item.payload, updates);
  } catch (const Error& e) {
    ++counters_.reflector_errors;
    discard(job.item, "reflector_error", job.item.spent_tokens, e.what());
    handler_done(job);
    return;
  }
  std::vector<BackendRequest> requests;
  if (custom) {
    custom->request_id = prefix + "0";
    custom->stage = job.stage;
    custom->item_id = job.item.item_id;
    if (custom->seed_material.empty()) custom->seed_material = custom->request_id;
    requests.push_back(std::move(*custom));
  } else {
    for (std::size_t k = 0; k < stage(job.stage).fan_out; ++k) {
      BackendRequest r;
      r.request_id = prefix + std::to_string(k);
      r.stage = job.stage;
      r.item_id = job.item.item_id;
      r.prompt_tokens = task_.config().prompt_tokens;
      r.max_output_tokens = task_.config().max_output_tokens;
      r.seed_material = r.request_id;
      r.prompt = "Reconcile the stale edits with the newer pool updates.";
      requests.push_back(std::move(r));
    }
  }
  const std::uint64_t id = job.id;
  for (auto& r : requests) {
    submit(job, std::move(r), [this, id](BackendOutcome o) { on_reflect(id, std::move(o)); });
  }
}

void Pipeline::on_reflect(std::uint64_t job_id, BackendOutcome outcome) {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return;
  Job& job = *it->second;
  --job.remaining;
  if (absorb(job, outcome, fatal_) && !job.response) job.response = outcome.response;
  if (job.remaining == 0) finish_reflect(job);
  pump();
}

void Pipeline::finish_reflect(Job& job) {
  if (job.error) {
    fail(job, *job.error);
    return;
  }
  const GateDecision g = gate(job.item, pool_, topology_.policy, reflector_.get(),
                              job.response ? &*job.response : nullptr);
  if (g.outcome == GateOutcome::discard) {
    if (g.reflector_error) ++counters_.reflector_errors;
    discard(job.item, g.reflector_error ? "reflector_error" : "reflector_drop",
            job.item.spent_tokens + job.tokens, g.error);
    handler_done(job);
    return;
  }
  QueueItem item = job.item;
  const PoolVersion from_version = item.origin_version;
  if (g.patched_payload) item.payload = *g.patched_payload;
  item.stage = item.return_stage;
  item.origin_version = pool_.version();
  item.spec_lineage.clear();
  item.force_stale = false;
  item.spent_tokens += job.tokens;
  ++item.reflections;
  emit(EventKind::patch, job.stage, item.item_id,
       {{"return_stage", item.stage},
        {"from_version", from_version},
        {"to_version", item.origin_version},
        {"payload", payload_to_json(item.payload)}});
  ++counters_.patched;
  stage(job.stage).rate->record(executor_.now());
  stage(item.stage).queue.push_front(std::move(item));
  handler_done(job);
}

void Pipeline::push(Job& job, QueueItem item, bool final) {
  item.item_id = next_item_id_++;
  Stage& dst = stage(item.stage);
  const bool full = dst.spec.capacity && dst.queue.size() >= *dst.spec.capacity;
  if (!update_cap_reached() && (full || !dst.blocked.empty())) {
    ++job.pending_pushes;
    dst.blocked.push_back({job.id, std::move(item), final, job.stage, job.item.item_id});
    return;
  }
  enqueue_now(job.stage, std::move(item), final, job.item.item_id);
}

void Pipeline::enqueue_now(const std::string& from, QueueItem item, bool final, std::uint64_t source_item) {
  if (hits_rollback(item.spec_lineage)) item.force_stale = true;
  item.spec_lineage = live_lineage(item.spec_lineage);
  item.origin_version = pool_.version();
  item.created_at = executor_.now();
  events::Emitter{trace_, executor_, pool_}.push(from, item, final, source_item);
  if (final) ++counters_.processed;
  stage(from).rate->record(executor_.now());
  stage(item.stage).queue.push_back(std::move(item));
}

void Pipeline::drain_blocked(Stage& s, bool ignore_capacity) {
  while (!s.blocked.empty() &&
         (ignore_capacity || !s.spec.capacity || s.queue.size() < *s.spec.capacity)) {
    Stage::Blocked b = std::move(s.blocked.front());
    s.blocked.pop_front();
    enqueue_now(b.from, std::move(b.item), b.final, b.source_item);
    if (auto it = jobs_.find(b.job); it != jobs_.end()) {
      --it->second->pending_pushes;
      maybe_finish(b.job);
    }
  }
}

void Pipeline::discard(const QueueItem& item, const std::string& reason, std::uint64_t wasted,
                       const std::string& message) {
  events::Emitter{trace_, executor_, pool_}.discard(item, reason, wasted, message);
  ++counters_.discarded;
  counters_.wasted_tokens += wasted;
}

void Pipeline::fail(Job& job, const std::string& message) {
  failed_.push_back({job.item.item_id, job.stage, message});
  ++counters_.failed;
  QueueItem view = job.item;
  view.stage = job.stage;
  events::Emitter{trace_, executor_, pool_}.discard(view, "handler_error", 0, message);
  handler_done(job);
}

void Pipeline::handler_done(Job& job) {
  job.done = true;
  maybe_finish(job.id);
}

void Pipeline::maybe_finish(std::uint64_t job_id) {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return;
  Job& job = *it->second;
  if (!job.done || job.pending_pushes > 0 || job.remaining > 0) return;
  --stage(job.stage).busy;
  jobs_.erase(it);
  pump();
}

std::set<std::string> Pipeline::live_lineage(const std::set<std::string>& lineage) const {
  std::set<std::string> out;
  for (const auto& id : lineage) {
    const auto entry = pool_.find(id);
    if (entry && entry->status == EntryStatus::speculative) out.insert(id);
  }
  return out;
}

bool Pipeline::hits_rollback(const std::set<std::string>& lineage) const {
  return std::any_of(lineage.begin(), lineage.end(), [this](const std::string& id) { return rolled_back_.count(id) != 0; });
}

std::size_t Pipeline::on_rollback(const std::string& artifact_id) {
  rolled_back_.insert(artifact_id);
  ++counters_.rollbacks;
  return mark_stale_lineage(artifact_id);
}

std::size_t Pipeline::mark_stale_lineage(const std::string& artifact_id) {
  std::size_t n = 0;
  for (auto& [name, s] : stages_) {
    for (auto& item : s.queue) {
      if (!item.spec_lineage.count(artifact_id)) continue;
      if (!item.force_stale) ++counters_.flagged;
      item.force_stale = true;
      ++n;
    }
  }
  return n;
}

void Pipeline::control_tick() {
  if (stopping() || fatal_) return;
  const double now = executor_.now();
  std::map<std::string, double> rates;
  std::map<std::string, int> current;
  std::map<std::string, WorkerBounds> bounds;
  for (auto& [name, s] : stages_) {
    rates[name] = s.rate->rate(now);
    current[name] = s.target;
    bounds[name] = {s.spec.k_min, s.spec.k_max};
  }
  const auto next = adjust_workers(rates, current, bounds);
  for (const auto& name : dispatch_order_) {
    if (next.at(name) != current.at(name)) set_worker_count(name, next.at(name));
  }
  std::weak_ptr<int> alive = alive_;
  executor_.schedule_after(topology_.options.control_period_s, [this, alive] {
    if (!alive.expired()) control_tick();
  });
}

}  // namespace evoflux
