// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "evoflux/config.hpp"
#include "evoflux/errors.hpp"
#include "evoflux/metrics.hpp"
#include "evoflux/pipeline.hpp"

using namespace evoflux;

namespace {

struct Outcome {
  bool pass = true;
  std::string note;
};

int failures = 0;

void criterion(int n, const std::string& title, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s criterion %d: %s (%.2fs)%s%s\n", o.pass ? "PASS" : "FAIL", n, title.c_str(), secs,
              o.note.empty() ? "" : " -- ", o.note.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

/// W1 task and backend for a seed, as run_experiment builds them.
struct W1 {
  ExperimentConfig config;
  SyntheticTask task;
  VirtualEventLoop loop;
  SimBackend backend;
  ArtifactPool pool;
  Trace trace;

  static TaskConfig task_config(const ExperimentConfig& c) {
    TaskConfig tc = c.task;
    tc.rng_seed = c.seed;
    return tc;
  }
  static SimBackendConfig sim_config(const ExperimentConfig& c) {
    SimBackendConfig sc = c.sim;
    sc.rng_seed = c.seed;
    return sc;
  }

  explicit W1(std::uint64_t seed)
      : config(w1_config(RunMode::sync, seed)), task(task_config(config)), backend(loop, sim_config(config)) {
    seed_pool(pool, task);
  }
};

std::vector<std::string> lines(const std::vector<TraceEvent>& events) {
  std::vector<std::string> out;
  for (const auto& e : events) out.push_back(to_json(e).dump());
  return out;
}

// 1 ------------------------------------------------------------------------

Outcome barrier_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream note;
  bool pass = true;
  std::size_t total = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    W1 ref(seed);
    run_sync_reference(ref.task, ref.pool, ref.backend, ref.loop, ref.trace, ref.config.budget);
    W1 eng(seed);
    Pipeline p(sync_topology(), eng.task, eng.pool, eng.backend, eng.loop, eng.trace);
    p.run(eng.config.budget);
    const auto a = lines(ref.trace.events());
    const auto b = lines(eng.trace.events());
    total += a.size();
    if (a != b) {
      pass = false;
      std::size_t i = 0;
      while (i < a.size() && i < b.size() && a[i] == b[i]) ++i;
      note << "seed " << seed << " diverges at event " << i << " of " << a.size() << "/" << b.size() << "; ";
      if (i < a.size()) note << "ref " << a[i] << "; ";
      if (i < b.size()) note << "engine " << b[i] << "; ";
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs >= 10.0) {
    pass = false;
    note << "took " << secs << "s; ";
  }
  if (pass) note << total << " events identical over seeds 1-5";
  return {pass, note.str()};
}

// 2, 3 ----------------------------------------------------------------------

struct SpeedRow {
  double sync_ppm, async_ppm, sync_conc, async_conc;
};

std::map<std::uint64_t, SpeedRow>& speed_rows() {
  static std::map<std::uint64_t, SpeedRow> rows;
  if (rows.empty()) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto s = run_experiment(w1_config(RunMode::sync, seed)).report;
      const auto a = run_experiment(w1_config(RunMode::async, seed)).report;
      rows[seed] = {s.proposals_per_min, a.proposals_per_min, s.average_concurrency, a.average_concurrency};
    }
  }
  return rows;
}

Outcome proposal_speedup() {
  bool pass = true;
  std::ostringstream note;
  for (const auto& [seed, r] : speed_rows()) {
    const double ratio = r.sync_ppm > 0 ? r.async_ppm / r.sync_ppm : 0.0;
    pass &= ratio >= 2.0;
    note << "seed " << seed << ": " << fmt("%.2f/%.2f=%.2fx", r.async_ppm, r.sync_ppm, ratio) << "; ";
  }
  return {pass, note.str()};
}

Outcome concurrency_gain() {
  bool pass = true;
  std::ostringstream note;
  for (const auto& [seed, r] : speed_rows()) {
    pass &= r.async_conc > r.sync_conc;
    note << "seed " << seed << ": " << fmt("%.2f vs %.2f", r.async_conc, r.sync_conc) << "; ";
  }
  return {pass, note.str()};
}

// 4 ------------------------------------------------------------------------

Outcome guarded_fuzz() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20240611);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const double alphas[] = {0.25, 0.5, 0.75, 1.0};
  std::size_t violations = 0, handled = 0, discards = 0, stale_seen = 0;
  for (int run = 0; run < 1000; ++run) {
    TaskConfig tc;
    tc.n_features = pick(4, 10);
    tc.n_train_samples = pick(3, 9);
    tc.n_val_samples = pick(2, 8);
    tc.mb = pick(1, std::min(3, tc.n_train_samples));
    tc.features_per_sample = pick(1, std::min(3, tc.n_features));
    tc.mutation_rate = std::uniform_real_distribution<double>(0.2, 1.0)(rng);
    tc.rng_seed = rng();
    SyntheticTask task(tc);
    ArtifactPool pool(pick(0, 1) == 1);
    seed_pool(pool, task);
    VirtualEventLoop loop;
    Trace trace;
    SimBackendConfig sc{pick(1, 8), 50.0, long_tail_preset(), rng(), 0.0, {}};
    SimBackend backend(loop, sc);

    PipelineTopology t;
    for (const char* name : {"generate", "propose", "evaluate"}) {
      StageSpec s;
      s.name = name;
      s.handler_id = name;
      s.k_max = pick(1, 4);
      s.k_init = pick(1, s.k_max);
      s.alpha_spec = alphas[pick(0, 3)];
      if (pick(0, 1)) s.capacity = static_cast<std::size_t>(pick(1, 3));
      if (s.handler_id == "evaluate") s.speculative_insert = pick(0, 1) == 1;
      t.stages.push_back(s);
    }
    t.policy.variant = PolicyVariant::guarded;
    t.policy.delta_max = static_cast<std::uint64_t>(pick(0, 3));
    t.options.adaptive = pick(0, 1) == 1;
    t.options.control_period_s = 5.0;
    t.options.reorder_validation = pick(0, 1) == 1;

    Pipeline p(t, task, pool, backend, loop, trace);
    const std::int64_t dmax = static_cast<std::int64_t>(t.policy.delta_max);
    p.set_handler_probe([&](const QueueItem& item, std::int64_t) {
      ++handled;
      // gap recomputed from the pool, not taken from the engine
      const std::int64_t gap = static_cast<std::int64_t>(pool.version()) - static_cast<std::int64_t>(item.origin_version);
      if (item.force_stale || gap > dmax || gap < 0) ++violations;
    });
    p.run({static_cast<double>(pick(60, 240)), std::nullopt});
    discards += p.counters().discarded;
    stale_seen += p.counters().stale;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream note;
  note << handled << " handler starts, " << violations << " violations, " << stale_seen << " stale pops, " << discards
       << " discards";
  const bool pass = violations == 0 && secs < 30.0 && discards > 0;
  if (secs >= 30.0) note << ", over 30s";
  return {pass, note.str()};
}

// 5 ------------------------------------------------------------------------

enum class EditClass { orthogonal, subsumed, conflicting };

Outcome reflective_gate_oracle() {
  std::mt19937_64 rng(777);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::size_t mismatches = 0, patched = 0, dropped = 0;
  std::map<EditClass, std::size_t> seen;
  std::string first_bad;
  for (int trial = 0; trial < 500; ++trial) {
    const int nf = pick(2, 6);
    const int range = pick(2, 4);
    std::vector<std::string> features;
    for (int i = 0; i < nf; ++i) features.push_back("f" + std::to_string(i));
    auto random_genome = [&] {
      Genome g;
      for (const auto& f : features) g[f] = pick(0, range - 1);
      return g;
    };

    // Our own record of the pool: genomes, parents, confirmed scores.
    ArtifactPool pool;
    std::map<std::string, Genome> genome_of;
    std::map<std::string, std::string> parent_of;
    struct Confirmed {
      std::string id;
      double score;
      PoolVersion version;
    };
    std::vector<Confirmed> confirmed;
    std::vector<std::pair<PoolVersion, std::string>> confirm_events;  // version -> artifact id
    std::map<std::string, double> speculative;

    auto make = [&](const std::string& id, const Genome& g, std::optional<std::string> parent) {
      Artifact a;
      a.id = id;
      a.payload = encode_genome(g);
      a.parent_id = parent;
      genome_of[id] = g;
      if (parent) parent_of[id] = *parent;
      return a;
    };

    const double seed_score = pick(0, 3) / 10.0;
    pool.insert_confirmed(make("seed", random_genome(), std::nullopt), seed_score);
    confirmed.push_back({"seed", seed_score, 1});
    confirm_events.push_back({1, "seed"});

    const int n_ops = pick(1, 7);
    const PoolVersion origin = static_cast<PoolVersion>(pick(1, 1 + n_ops / 2));
    Genome origin_base;
    std::string origin_id;
    int next = 0;
    for (int op = 0; op < n_ops || pool.version() <= origin; ++op) {
      if (pool.version() == origin) {
        // the stale item was born here, off the best confirmed entry
        auto best = std::max_element(confirmed.begin(), confirmed.end(), [](const auto& a, const auto& b) {
          return a.score < b.score || (a.score == b.score && a.version > b.version);
        });
        origin_id = best->id;
        origin_base = genome_of[origin_id];
      }
      const std::string parent = confirmed[static_cast<std::size_t>(pick(0, static_cast<int>(confirmed.size()) - 1))].id;
      Genome g = genome_of[parent];
      const int changes = pick(1, 2);
      for (int k = 0; k < changes; ++k) g[features[static_cast<std::size_t>(pick(0, nf - 1))]] = pick(0, range - 1);
      const std::string id = "a" + std::to_string(next++);
      const double best_now = pool.best_score();
      const int kind = speculative.empty() ? pick(0, 1) : pick(0, 2);
      if (kind == 0) {
        const double s = pick(0, 10) / 10.0;
        pool.insert_confirmed(make(id, g, parent), s);
        confirmed.push_back({id, s, pool.version()});
        confirm_events.push_back({pool.version(), id});
      } else if (kind == 1 && best_now < 1.0) {
        const double s = std::min(1.0, best_now + 0.05 * pick(1, 4));
        pool.insert_speculative(make(id, g, parent), s);
        speculative[id] = s;
      } else if (!speculative.empty()) {
        const std::string sid = speculative.begin()->first;
        speculative.erase(speculative.begin());
        const double full = pick(0, 10) / 10.0;
        const auto r = pool.confirm_speculative(sid, full);
        if (r.outcome == ConfirmOutcome::confirmed) {
          confirmed.push_back({sid, full, r.version});
          confirm_events.push_back({r.version, sid});
        }
      } else {
        const double s = pick(0, 10) / 10.0;
        pool.insert_confirmed(make(id, g, parent), s);
        confirmed.push_back({id, s, pool.version()});
        confirm_events.push_back({pool.version(), id});
      }
    }
    const PoolVersion v = pool.version();
    if (origin_id.empty()) continue;

    // stale candidate: random edits against the origin base
    EditSet edits;
    const int n_edits = pick(1, nf);
    for (int k = 0; k < n_edits; ++k) edits[features[static_cast<std::size_t>(pick(0, nf - 1))]] = pick(0, range - 1);
    QueueItem item;
    item.item_id = 1;
    item.stage = "evaluate";
    item.origin_version = origin;
    CandidatePayload cand;
    cand.artifact_id = "cand";
    cand.parent_id = origin_id;
    cand.genome = apply_edits(origin_base, edits);
    cand.edits = edits;
    cand.created_at_version = origin;
    item.payload = cand;

    // brute force: the field values each confirmed-state change wrote
    std::map<std::string, std::vector<int>> written;
    for (const auto& [ver, id] : confirm_events) {
      if (ver <= origin || ver > v) continue;
      const Genome& g = genome_of[id];
      const auto pit = parent_of.find(id);
      for (const auto& [f, val] : g) {
        const bool changed = pit == parent_of.end() || genome_of[pit->second].at(f) != val;
        if (changed) written[f].push_back(val);
      }
    }
    EditSet expected_keep;
    for (const auto& [f, val] : edits) {
      EditClass c = EditClass::orthogonal;
      if (written.count(f)) {
        c = written[f].back() == val ? EditClass::subsumed : EditClass::conflicting;
      }
      ++seen[c];
      if (c == EditClass::orthogonal) expected_keep[f] = val;
    }

    MockReflector mock;
    const GateDecision d = gate(item, pool, {PolicyVariant::reflective, 0, "mock"}, &mock);
    bool ok;
    if (v == origin) {
      ok = d.outcome == GateOutcome::proceed;
    } else if (expected_keep.empty()) {
      ok = d.outcome == GateOutcome::discard && !d.reflector_error;
      ++dropped;
    } else {
      ++patched;
      auto best = std::max_element(confirmed.begin(), confirmed.end(), [](const auto& a, const auto& b) {
        return a.score < b.score || (a.score == b.score && a.version > b.version);
      });
      ok = d.outcome == GateOutcome::patched && d.patched_payload;
      if (ok) {
        const auto& got = std::get<CandidatePayload>(*d.patched_payload);
        ok = got.parent_id == best->id && got.edits == expected_keep &&
             got.genome == apply_edits(genome_of[best->id], expected_keep) && got.created_at_version == v &&
             got.artifact_id == "cand";
      }
    }
    if (!ok) {
      ++mismatches;
      if (first_bad.empty()) first_bad = "trial " + std::to_string(trial) + " outcome " + to_string(d.outcome);
    }
  }
  std::ostringstream note;
  note << patched << " patched, " << dropped << " dropped, " << mismatches << " mismatches; edits classified "
       << seen[EditClass::orthogonal] << " orthogonal / " << seen[EditClass::subsumed] << " subsumed / "
       << seen[EditClass::conflicting] << " conflicting";
  if (!first_bad.empty()) note << "; first " << first_bad;
  return {mismatches == 0 && patched > 0 && dropped > 0, note.str()};
}

// 6 ------------------------------------------------------------------------

Outcome speculation_rules() {
  std::ostringstream note;
  bool pass = true;

  // (a) thresholds against integer ceilings
  std::size_t bad_threshold = 0;
  const std::pair<double, std::pair<int, int>> alphas[] = {{0.25, {1, 4}}, {0.5, {1, 2}}, {1.0, {1, 1}}};
  for (const auto& [alpha, frac] : alphas) {
    for (int n = 1; n <= 20; ++n) {
      const std::size_t expect = static_cast<std::size_t>((frac.first * n + frac.second - 1) / frac.second);
      if (release_threshold(alpha, static_cast<std::size_t>(n)) != expect) ++bad_threshold;
      ReleaseTracker t(alpha, static_cast<std::size_t>(n));
      std::size_t released_at = 0;
      for (int k = 1; k <= n; ++k) {
        if (t.on_complete()) {
          if (released_at) ++bad_threshold;  // second release
          released_at = static_cast<std::size_t>(k);
        }
      }
      const bool speculative = expect < static_cast<std::size_t>(n);
      if (speculative ? released_at != expect : released_at != 0) ++bad_threshold;
    }
  }
  pass &= bad_threshold == 0;
  note << "(a) " << bad_threshold << " threshold errors; ";

  // (b), (c) on speculative W1-shaped runs
  std::size_t rollbacks = 0, flagged = 0, leaked_handlers = 0, leaked_commits = 0, unmatched = 0;
  std::size_t records = 0, bad_records = 0, tentative_mismatch = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const ExperimentConfig cfg = w1_config(RunMode::async, seed);
    SyntheticTask task(W1::task_config(cfg));
    VirtualEventLoop loop;
    SimBackend backend(loop, W1::sim_config(cfg));
    ArtifactPool pool(true);
    seed_pool(pool, task);
    Trace trace;
    PipelineTopology t = cfg.topology;
    t.stages[0].alpha_spec = 0.25;
    t.stages[2].alpha_spec = 0.25;
    t.stages[2].speculative_insert = true;
    Pipeline p(t, task, pool, backend, loop, trace);
    auto hits = [&](const QueueItem& item) {
      return std::any_of(item.spec_lineage.begin(), item.spec_lineage.end(),
                         [&](const std::string& id) { return p.rolled_back().count(id) != 0; });
    };
    p.set_handler_probe([&](const QueueItem& item, std::int64_t) {
      if (hits(item) || item.force_stale) ++leaked_handlers;
    });
    p.set_commit_probe([&](const QueueItem& item, UpdateOp) {
      if (hits(item) || item.force_stale) ++leaked_commits;
    });
    p.run(cfg.budget);

    std::size_t rollback_events = 0;
    std::map<std::uint64_t, int> tentative_by_source;
    for (const auto& e : trace.events()) {
      if (e.kind == EventKind::pool_update && e.detail["op"] == "rollback") ++rollback_events;
      if (e.kind == EventKind::push && e.detail.value("tentative", false)) {
        ++tentative_by_source[e.detail["source_item"].get<std::uint64_t>()];
      }
    }
    rollbacks += rollback_events;
    flagged += p.counters().flagged;
    if (rollback_events != p.counters().rollbacks || rollback_events != p.rolled_back().size()) ++unmatched;

    for (const auto& [item, rec] : p.speculation_ledger()) {
      ++records;
      if (rec.releases != 1 || rec.reconciles != 1 || !rec.outcome) ++bad_records;
      if (rec.stage == "generate" && tentative_by_source[item] != 1) ++tentative_mismatch;
    }
    for (const auto& [src, n] : tentative_by_source) {
      if (n != 1 || !p.speculation_ledger().count(src)) ++tentative_mismatch;
    }
  }
  const bool b_ok = rollbacks > 0 && unmatched == 0 && leaked_handlers == 0 && leaked_commits == 0;
  const bool c_ok = records > 0 && bad_records == 0 && tentative_mismatch == 0;
  pass &= b_ok && c_ok;
  note << "(b) " << rollbacks << " rollbacks, " << flagged << " items flagged, " << leaked_handlers
       << " flagged handler starts, " << leaked_commits << " flagged commits; (c) " << records << " records, "
       << bad_records << " not exactly-once, " << tentative_mismatch << " tentative mismatches";
  return {pass, note.str()};
}

// 7 ------------------------------------------------------------------------

double oracle_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

Outcome controller_rules() {
  std::mt19937_64 rng(99);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::size_t rule_errors = 0, step_errors = 0, clamp_errors = 0, scale_errors = 0, moves = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = pick(2, 6);
    std::map<std::string, double> rates;
    std::map<std::string, int> cur;
    std::map<std::string, WorkerBounds> bounds;
    std::vector<double> values;
    const bool integral = trial % 2 == 0;
    for (int i = 0; i < n; ++i) {
      const std::string s = "s" + std::to_string(i);
      const double r = integral ? pick(0, 40) : std::uniform_real_distribution<double>(0.0, 50.0)(rng);
      rates[s] = r;
      values.push_back(r);
      const int lo = pick(1, 3);
      const int hi = pick(lo, lo + 4);
      bounds[s] = {lo, hi};
      cur[s] = pick(lo, hi);
    }
    const auto next = adjust_workers(rates, cur, bounds);
    const double m = oracle_median(values);
    for (const auto& [s, r] : rates) {
      int want = cur[s];
      if (r < m / 2) want = std::min(cur[s] + 1, bounds[s].k_max);
      if (r > 2 * m) want = std::max(cur[s] - 1, bounds[s].k_min);
      if (next.at(s) != want) ++rule_errors;
      if (std::abs(next.at(s) - cur[s]) > 1) ++step_errors;
      if (next.at(s) < bounds[s].k_min || next.at(s) > bounds[s].k_max) ++clamp_errors;
      moves += next.at(s) != cur[s];
    }
    // integral rates use power-of-two scales so boundary ties stay exact
    const double c = integral ? std::ldexp(1.0, pick(-6, 6)) : std::exp(std::uniform_real_distribution<double>(-5, 5)(rng));
    std::map<std::string, double> scaled;
    for (const auto& [s, r] : rates) scaled[s] = r * c;
    if (adjust_workers(scaled, cur, bounds) != next) ++scale_errors;
  }
  std::ostringstream note;
  note << "10000 cases, " << moves << " moves; errors: rule " << rule_errors << ", step " << step_errors << ", clamp "
       << clamp_errors << ", scale " << scale_errors;
  return {rule_errors + step_errors + clamp_errors + scale_errors == 0 && moves > 0, note.str()};
}

// 8 ------------------------------------------------------------------------

Outcome reorder_rule() {
  std::mt19937_64 rng(4242);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const std::pair<double, std::pair<int, int>> alphas[] = {{0.25, {1, 4}}, {0.5, {1, 2}}, {0.75, {3, 4}}, {1.0, {1, 1}}};
  std::size_t errors = 0, perm_errors = 0, demoted = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = pick(1, 20);
    std::vector<std::string> order;
    for (int i = 0; i < n; ++i) order.push_back("v" + std::to_string(i));
    std::shuffle(order.begin(), order.end(), rng);
    PassHistory h;
    std::map<std::string, int> streak;
    for (const auto& s : order) {
      h.register_sample(s);
      streak[s] = 0;
    }
    const int events = pick(0, 8 * n);
    for (int k = 0; k < events; ++k) {
      const std::string& s = order[static_cast<std::size_t>(pick(0, n - 1))];
      const bool passed = pick(0, 3) != 0;
      h.record_validation_outcome(s, passed);
      streak[s] = passed ? streak[s] + 1 : 0;
    }
    const auto& [alpha, frac] = alphas[pick(0, 3)];
    const int p = (frac.first * n + frac.second - 1) / frac.second;
    std::vector<std::string> stay, movers;
    for (int i = 0; i < n; ++i) {
      const auto& s = order[static_cast<std::size_t>(i)];
      (i < p && streak[s] >= 3 ? movers : stay).push_back(s);
    }
    demoted += movers.size();
    stay.insert(stay.end(), movers.begin(), movers.end());
    const auto got = reorder_validation(h, order, alpha, 3);
    auto a = got, b = order;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) ++perm_errors;
    if (got != stay) ++errors;
  }
  std::ostringstream note;
  note << "1000 histories, " << demoted << " demotions; " << perm_errors << " non-permutations, " << errors
       << " rule errors";
  return {errors == 0 && perm_errors == 0 && demoted > 0, note.str()};
}

// 9 ------------------------------------------------------------------------

Outcome determinism() {
  const auto cfg = w1_config(RunMode::async, 42);
  const auto a = run_experiment(cfg);
  const auto b = run_experiment(cfg);
  const bool same_report = report_fingerprint(a.report) == report_fingerprint(b.report);
  const bool same_trace = lines(a.trace) == lines(b.trace);
  std::ostringstream note;
  note << report_fingerprint(a.report).size() << "-byte report, " << a.trace.size() << " events; report "
       << (same_report ? "identical" : "differs") << ", trace " << (same_trace ? "identical" : "differs");
  return {same_report && same_trace, note.str()};
}

// 10 -----------------------------------------------------------------------

Outcome report_fixtures() {
  const std::string dir = EVOFLUX_FIXTURE_DIR;
  const auto a = compute_report(Trace::read_jsonl(dir + "/trace_a.jsonl"), 120.0);
  const auto b = compute_report(Trace::read_jsonl(dir + "/trace_b.jsonl"), 120.0);
  const auto flat = compute_report(Trace::read_jsonl(dir + "/trace_flat.jsonl"), 120.0);
  auto near = [](double x, double y) { return std::fabs(x - y) < 1e-9; };
  std::vector<std::string> bad;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) bad.push_back(what);
  };
  // 300 tokens / 120 s; 6 proposals and 3 accepts in 2 min; t=130 lies past the budget
  expect(near(a.tokens_per_second, 2.5), "tokens/s");
  expect(near(a.proposals_per_min, 3.0), "proposals/min");
  expect(near(a.accepted_proposals_per_min, 1.5), "accepted/min");
  expect(a.wasted_tokens == 40, "wasted");
  expect(a.discard_count == 1 && a.failed_count == 1 && a.patch_count == 1 && a.stale_count == 2, "counters");
  expect(near(a.initial_score, 0.2) && near(a.final_score, 0.6), "scores");
  expect(a.score_curve == std::vector<ScorePoint>{{0, 0.2}, {30, 0.4}, {70, 0.5}, {90, 0.6}}, "score curve");
  // in flight: 2 on [0,2), 1 on [2,4) -> 6 request-seconds over 120 s
  expect(near(a.average_concurrency, 0.05) && a.max_concurrency == 2, "concurrency");
  expect(near(normalized_evolution_rate(a, b), 2.0), "rate a/b");
  expect(near(normalized_evolution_rate(a, a), 1.0), "rate a/a");
  expect(format_normalized_rate(a, flat) == "--", "flat baseline");
  bool threw = false;
  try {
    normalized_evolution_rate(b, flat);
  } catch (const UndefinedBaseline&) {
    threw = true;
  }
  expect(threw, "UndefinedBaseline");
  const auto empty = compute_report({}, 60.0);
  expect(empty.proposals_per_min == 0.0 && empty.tokens_per_second == 0.0, "empty trace");

  std::string note = bad.empty() ? "all hand-computed values match" : "mismatched:";
  for (const auto& s : bad) note += " " + s;
  return {bad.empty(), note};
}

}  // namespace

int main() {
  criterion(1, "barrier-mode engine replays the serial loop event for event on W1 seeds 1-5", barrier_equivalence);
  criterion(2, "async proposals/min at least 2x sync on W1 seeds 1-5", proposal_speedup);
  criterion(3, "async average concurrency above sync on every seed", concurrency_gain);
  criterion(4, "1000 random guarded pipelines never hand an over-gap item to a handler", guarded_fuzz);
  criterion(5, "reflective gate agrees with a brute-force edit classifier on 500 cases", reflective_gate_oracle);
  criterion(6, "release thresholds, rollback lineage flagging, exactly-once release and reconcile", speculation_rules);
  criterion(7, "controller median rules, clamps, unit steps and scale invariance", controller_rules);
  criterion(8, "validation reorder is a permutation obeying the w=3 demotion rule", reorder_rule);
  criterion(9, "W1 async seed 42 reports are identical across reruns", determinism);
  criterion(10, "report metrics and evolution rate match hand-computed fixtures", report_fixtures);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
