#include <doctest.h>

#include "evoflux/errors.hpp"
#include "evoflux/speculation.hpp"

using namespace evoflux;

namespace {

Artifact art(const std::string& id) {
  Artifact a;
  a.id = id;
  a.payload = encode_genome({{"x", 0}});
  return a;
}

}  // namespace

TEST_CASE("release threshold uses the ceiling") {
  CHECK(release_threshold(0.25, 4) == 1);
  CHECK(release_threshold(0.25, 3) == 1);
  CHECK(release_threshold(0.5, 3) == 2);
  CHECK(release_threshold(1.0, 3) == 3);
  CHECK(release_threshold(0.1, 30) == 3);
  CHECK(release_threshold(0.001, 5) == 1);
  CHECK_THROWS_AS(release_threshold(0.0, 3), ConfigError);
  CHECK_THROWS_AS(release_threshold(1.5, 3), ConfigError);
}

TEST_CASE("tracker releases once at the threshold") {
  ReleaseTracker t(0.25, 4);
  CHECK(t.speculative());
  CHECK(t.on_complete());
  CHECK(t.released_fraction() == 0.25);
  CHECK_FALSE(t.on_complete());
  CHECK_FALSE(t.on_complete());
  CHECK_FALSE(t.on_complete());
  CHECK(t.all_done());
  CHECK_THROWS_AS(t.on_complete(), InvariantViolation);
}

TEST_CASE("alpha of one never releases tentatively") {
  ReleaseTracker t(1.0, 3);
  CHECK_FALSE(t.speculative());
  for (int i = 0; i < 3; ++i) CHECK_FALSE(t.on_complete());
  CHECK_FALSE(t.released());
  CHECK(t.all_done());
}

TEST_CASE("partial score gate is strict") {
  CHECK(speculative_eval_gate({3, 4}, 0.5) == SpecGate::insert);
  CHECK(speculative_eval_gate({2, 4}, 0.5) == SpecGate::hold);
  CHECK(speculative_eval_gate({0, 1}, 0.0) == SpecGate::hold);
  ArtifactPool pool;
  pool.insert_confirmed(art("a"), 0.5);
  CHECK(speculative_eval_gate({3, 4}, pool) == SpecGate::insert);
  CHECK(PartialScore{}.score() == 0.0);
}

TEST_CASE("reconcile confirms or rolls back") {
  ArtifactPool pool;
  pool.insert_confirmed(art("a"), 0.5);
  pool.insert_speculative(art("s"), 0.75);
  std::vector<std::string> flagged;
  auto mark = [&](const std::string& id) {
    flagged.push_back(id);
    return std::size_t{0};
  };
  SUBCASE("full score beats best") {
    CHECK(reconcile(pool, "s", 0.8, mark) == ReconcileOutcome::confirmed);
    CHECK(flagged.empty());
    CHECK(pool.best_score() == 0.8);
  }
  SUBCASE("full score falls short") {
    CHECK(reconcile(pool, "s", 0.4, mark) == ReconcileOutcome::rolled_back);
    CHECK(flagged == std::vector<std::string>{"s"});
    CHECK_FALSE(pool.find("s"));
  }
  SUBCASE("a better confirm in between rolls the entry back") {
    pool.insert_confirmed(art("b"), 0.9);
    CHECK(reconcile(pool, "s", 0.8, mark) == ReconcileOutcome::rolled_back);
  }
}

TEST_CASE("outcome names") {
  CHECK(to_string(ReconcileOutcome::finalized) == "finalized");
  CHECK(to_string(ReconcileOutcome::rolled_back) == "rolled_back");
}
