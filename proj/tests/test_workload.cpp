#include <doctest.h>

#include <fstream>
#include <set>

#include "evoflux/errors.hpp"
#include "evoflux/pipeline.hpp"
#include "evoflux/workload.hpp"

using namespace evoflux;

namespace {

SyntheticTask fixture_task() { return SyntheticTask::from_fixture_file(EVOFLUX_FIXTURE_DIR "/task4.json"); }

nlohmann::json fixture_json() {
  std::ifstream in(EVOFLUX_FIXTURE_DIR "/task4.json");
  return nlohmann::json::parse(in);
}

/// Straight re-reading of the fixture file: a sample passes when at least
/// pass_fraction of its target features match.
double brute_force_score(const nlohmann::json& fx, const Genome& g) {
  const double need = fx["pass_fraction"].get<double>();
  double total = 0, got = 0;
  for (const auto& s : fx["val"]) {
    const double w = s["weight"].get<double>();
    total += w;
    int hit = 0, n = 0;
    for (const auto& [f, v] : s["target"].items()) {
      ++n;
      auto it = g.find(f);
      if (it != g.end() && it->second == v.get<int>()) ++hit;
    }
    if (hit >= need * n) got += w;
  }
  return got / total;
}

SimBackendConfig fast_backend() { return {8, 1000.0, FixedLengths{10}, 0, 0.0, {}}; }

}  // namespace

TEST_CASE("fixture score matches a hand computation") {
  const auto task = fixture_task();
  // v0, v1 and v3 pass with pass_fraction 0.5; v2 does not
  CHECK(task.score(task.initial_genome()) == doctest::Approx(0.7));
  // all zeros: v1 (1 of 2) and v2 (3 of 3) pass, weight 5 of 10
  CHECK(task.score({{"f00", 0}, {"f01", 0}, {"f02", 0}, {"f03", 0}}) == doctest::Approx(0.5));
}

TEST_CASE("fixture scores agree with a brute-force scorer over every genome") {
  const auto task = fixture_task();
  const auto fx = fixture_json();
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b)
      for (int c = 0; c < 5; ++c)
        for (int d = 0; d < 5; ++d) {
          const Genome g{{"f00", a}, {"f01", b}, {"f02", c}, {"f03", d}};
          CHECK(task.score(g) == doctest::Approx(brute_force_score(fx, g)));
        }
}

TEST_CASE("synthetic task shape") {
  SyntheticTask task(TaskConfig{});
  CHECK(task.features().size() == 16);
  CHECK(task.features().front() == "f00");
  CHECK(task.val().size() == 20);
  double w = 0;
  for (const auto& s : task.val()) w += s.weight;
  CHECK(w == doctest::Approx(1.0));
  SyntheticTask again(TaskConfig{});
  CHECK(again.initial_genome() == task.initial_genome());
  CHECK_THROWS_AS(SyntheticTask(TaskConfig{16, 2, 20, 3}), ConfigError);
}

TEST_CASE("minibatches are round-robin") {
  const auto task = fixture_task();
  const auto b0 = task.minibatch(0);
  const auto b1 = task.minibatch(1);
  REQUIRE(b0.size() == 3);
  CHECK(b0[0]->sample_id == "t0");
  CHECK(b0[2]->sample_id == "t2");
  CHECK(b1[0]->sample_id == "t0");
}

TEST_CASE("trajectories record matches and mismatches") {
  const auto task = fixture_task();
  const TaskSample s{"x", {{"f00", 1}, {"f01", 9}}, 1.0};
  const auto t = task.run_sample(task.initial_genome(), s);
  REQUIRE(t.checks.size() == 2);
  CHECK(t.checks[0].match);
  CHECK_FALSE(t.checks[1].match);
  CHECK(t.failed());
  CHECK(task.corrections({t}) == EditSet{{"f01", 9}});
  const TaskSample ok{"y", {{"f00", 1}}, 1.0};
  CHECK_FALSE(task.run_sample(task.initial_genome(), ok).failed());
}

TEST_CASE("propose applies corrections plus one perturbation") {
  const auto task = fixture_task();  // mutation_rate 1
  FeedbackPayload f;
  f.parent_id = "seed";
  f.parent = task.initial_genome();
  f.corrections = {{"f00", 0}};
  const Genome corrected = apply_edits(f.parent, f.corrections);
  int kept = 0;
  for (int i = 0; i < 50; ++i) {
    const auto c = task.propose(f, "c" + std::to_string(i), 1);
    CHECK(diff_genomes(corrected, c.genome).size() <= 1);
    CHECK(c.edits == diff_genomes(f.parent, c.genome));
    kept += c.genome.at("f00") == 0;
  }
  CHECK(kept >= 35);
  CHECK(task.propose(f, "c9", 1) == task.propose(f, "c9", 1));

  FeedbackPayload clean = f;
  clean.corrections.clear();
  const auto c = task.propose(clean, "c0", 1);
  CHECK(diff_genomes(f.parent, c.genome).size() <= 1);
}

TEST_CASE("generate issues mb requests and evaluate one per validation sample") {
  const auto task = fixture_task();
  VirtualEventLoop loop;
  SimBackend be(loop, fast_backend());
  std::optional<FeedbackPayload> fb;
  generate_handler(task, {"seed", task.initial_genome()}, 0, 1, be, [&](FeedbackPayload f) { fb = f; });
  loop.run_until(1e9, {});
  CHECK(be.submitted() == 3);
  REQUIRE(fb);
  CHECK(fb->trajectories.size() == 3);
  CHECK(fb->corrections == EditSet{{"f00", 0}, {"f01", 0}, {"f02", 0}, {"f03", 0}});

  CandidatePayload cand{"c0", "seed", task.initial_genome(), {}, 1};
  std::vector<std::string> order{"v3", "v2", "v1", "v0"};
  std::optional<EvaluationResult> res;
  evaluate_handler(task, cand, order, 2, be, [&](EvaluationResult r) { res = r; });
  loop.run_until(1e9, {});
  CHECK(be.submitted() == 7);
  REQUIRE(res);
  CHECK(res->outcomes.front().first == "v3");
  CHECK(res->score == doctest::Approx(0.7));
}

TEST_CASE("handler failures reach the failure callback once") {
  const auto task = fixture_task();
  VirtualEventLoop loop;
  auto cfg = fast_backend();
  cfg.fail_if = [](const BackendRequest& r) { return r.request_id.find("/generate/t1") != std::string::npos; };
  SimBackend be(loop, cfg);
  int done = 0, failed = 0;
  generate_handler(task, {"seed", task.initial_genome()}, 0, 1, be, [&](FeedbackPayload) { ++done; },
                   [&](BackendOutcome) { ++failed; });
  loop.run_until(1e9, {});
  CHECK(done == 0);
  CHECK(failed == 1);
}

TEST_CASE("one sync step costs mb + 1 + n_val requests") {
  SyntheticTask task(TaskConfig{});
  ArtifactPool pool;
  seed_pool(pool, task);
  VirtualEventLoop loop;
  Trace trace;
  SimBackend be(loop, {8, 50.0, long_tail_preset(), 42, 0.0, {}});
  run_sync_reference(task, pool, be, loop, trace, {1e-6, std::nullopt});
  CHECK(be.submitted() == 3 + 1 + 20);
}

TEST_CASE("sync steps never lower the best score") {
  TaskConfig cfg;
  cfg.mutation_rate = 1.0;
  SyntheticTask task(cfg);
  ArtifactPool pool;
  seed_pool(pool, task);
  VirtualEventLoop loop;
  Trace trace;
  SimBackend be(loop, {8, 50.0, long_tail_preset(), 42, 0.0, {}});
  run_sync_reference(task, pool, be, loop, trace, {900.0, std::nullopt});
  double best = -1;
  int steps = 0;
  for (const auto& e : trace.events()) {
    if (e.kind != EventKind::pool_update) continue;
    CHECK(e.detail["best_score"].get<double>() >= best);
    best = e.detail["best_score"].get<double>();
    ++steps;
  }
  CHECK(steps > 1);
  CHECK(pool.best_score() > task.score(task.initial_genome()));
}

TEST_CASE("sync reference is deterministic") {
  auto run = [] {
    SyntheticTask task(TaskConfig{});
    ArtifactPool pool;
    seed_pool(pool, task);
    VirtualEventLoop loop;
    Trace trace;
    SimBackend be(loop, {8, 50.0, long_tail_preset(), 42, 0.0, {}});
    run_sync_reference(task, pool, be, loop, trace, {300.0, std::nullopt});
    return trace.events();
  };
  CHECK(run() == run());
}

TEST_CASE("max pool updates stops the sync loop") {
  SyntheticTask task(TaskConfig{});
  ArtifactPool pool;
  seed_pool(pool, task);
  VirtualEventLoop loop;
  Trace trace;
  SimBackend be(loop, {8, 50.0, long_tail_preset(), 42, 0.0, {}});
  run_sync_reference(task, pool, be, loop, trace, {1e9, 2});
  CHECK(pool.version() == 3);
}
