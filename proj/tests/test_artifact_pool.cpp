#include <doctest.h>

#include <random>
#include <thread>

#include "evoflux/artifact_pool.hpp"
#include "evoflux/edits.hpp"
#include "evoflux/errors.hpp"

using namespace evoflux;

namespace {

Artifact art(const std::string& id, std::optional<std::string> parent = std::nullopt) {
  Artifact a;
  a.id = id;
  a.payload = encode_genome({{"x", 0}, {"y", 0}});
  a.parent_id = std::move(parent);
  return a;
}

Artifact genome_art(const std::string& id, const Genome& g, std::optional<std::string> parent) {
  Artifact a;
  a.id = id;
  a.payload = encode_genome(g);
  a.parent_id = std::move(parent);
  return a;
}

}  // namespace

TEST_CASE("first insert bumps version and best score") {
  ArtifactPool pool;
  CHECK(pool.version() == 0);
  CHECK(pool.insert_confirmed(art("a0"), 0.5) == 1);
  CHECK(pool.best_score() == 0.5);
}

TEST_CASE("non-improving insert keeps best score") {
  ArtifactPool pool;
  pool.insert_confirmed(art("a1"), 0.5);
  pool.insert_confirmed(art("a2"), 0.1);
  pool.insert_confirmed(art("a3"), 0.3);
  CHECK(pool.insert_confirmed(art("a4"), 0.2) == 4);
  CHECK(pool.best_score() == 0.5);
}

TEST_CASE("duplicate ids and bad scores are rejected") {
  ArtifactPool pool;
  pool.insert_confirmed(art("a"), 0.5);
  CHECK_THROWS_AS(pool.insert_confirmed(art("a"), 0.6), DuplicateArtifact);
  CHECK_THROWS_AS(pool.insert_confirmed(art("b"), 1.5), RangeError);
  CHECK_THROWS_AS(pool.insert_confirmed(art("c", "nope"), 0.5), InvariantViolation);
  CHECK(pool.version() == 1);
}

TEST_CASE("speculative insert gate is strict") {
  ArtifactPool pool;
  CHECK(pool.insert_speculative(art("s0"), 0.1) == 1);  // empty pool, best 0
  ArtifactPool p2;
  p2.insert_confirmed(art("a"), 0.5);
  CHECK_THROWS_AS(p2.insert_speculative(art("s1"), 0.5), GateFailed);
  p2.insert_speculative(art("s2"), 0.6);
  REQUIRE(p2.find("s2"));
  CHECK(p2.find("s2")->status == EntryStatus::speculative);
  // speculative entries do not raise the confirmed best
  CHECK(p2.best_score() == 0.5);
}

TEST_CASE("confirm and rollback") {
  ArtifactPool pool;
  pool.insert_confirmed(art("a"), 0.5);
  pool.insert_speculative(art("s"), 0.6);
  SUBCASE("passing full score confirms") {
    auto r = pool.confirm_speculative("s", 0.62);
    CHECK(r.outcome == ConfirmOutcome::confirmed);
    CHECK(r.version == 3);
    CHECK(pool.find("s")->status == EntryStatus::confirmed);
    CHECK(pool.find("s")->score == 0.62);
    CHECK(pool.best_score() == 0.62);
    CHECK_THROWS_AS(pool.confirm_speculative("s", 0.9), NotSpeculative);
  }
  SUBCASE("failing full score removes the entry") {
    auto r = pool.confirm_speculative("s", 0.45);
    CHECK(r.outcome == ConfirmOutcome::rolled_back);
    CHECK_FALSE(pool.find("s"));
    CHECK(pool.entries().size() == 1);
    CHECK(pool.log().back().op == UpdateOp::rollback);
    // the id stays burned
    CHECK_THROWS_AS(pool.insert_confirmed(art("s"), 0.1), DuplicateArtifact);
  }
  CHECK_THROWS_AS(pool.confirm_speculative("a", 0.9), NotSpeculative);
}

TEST_CASE("updates_between windows") {
  ArtifactPool pool;
  for (int i = 0; i < 5; ++i) pool.insert_confirmed(art("a" + std::to_string(i)), 0.1 * i);
  CHECK(pool.updates_between(3, 3).empty());
  CHECK(pool.updates_between(0, 5).size() == 5);
  auto mid = pool.updates_between(2, 4);
  REQUIRE(mid.size() == 2);
  CHECK(mid[0].version == 3);
  CHECK(mid[1].version == 4);
  CHECK_THROWS_AS(pool.updates_between(4, 2), RangeError);
  CHECK_THROWS_AS(pool.updates_between(0, 6), RangeError);
}

TEST_CASE("selection picks the best, earliest on ties") {
  std::mt19937_64 rng(1);
  BestScoreSelector sel;
  ArtifactPool empty;
  CHECK_THROWS_AS(empty.select_candidate(sel, rng), EmptyPool);

  ArtifactPool one;
  one.insert_confirmed(art("only"), 0.2);
  CHECK(one.select_candidate(sel, rng).id == "only");

  ArtifactPool two;
  two.insert_confirmed(art("a"), 0.5);
  two.insert_confirmed(art("b"), 0.7);
  CHECK(two.select_candidate(sel, rng).id == "b");

  ArtifactPool tie;
  tie.insert_confirmed(art("a"), 0.7);
  tie.insert_confirmed(art("b"), 0.7);
  CHECK(tie.select_candidate(sel, rng).id == "a");
}

TEST_CASE("speculative entries are selectable only when enabled") {
  std::mt19937_64 rng(1);
  BestScoreSelector sel;
  ArtifactPool off(false);
  off.insert_confirmed(art("a"), 0.5);
  off.insert_speculative(art("s"), 0.9);
  CHECK(off.select_candidate(sel, rng).id == "a");
  ArtifactPool on(true);
  on.insert_confirmed(art("a"), 0.5);
  on.insert_speculative(art("s"), 0.9);
  CHECK(on.select_candidate(sel, rng).id == "s");
}

TEST_CASE("update diffs are relative to the parent") {
  ArtifactPool pool;
  pool.insert_confirmed(genome_art("p", {{"x", 1}, {"y", 2}}, std::nullopt), 0.1);
  pool.insert_confirmed(genome_art("c", {{"x", 1}, {"y", 5}}, "p"), 0.2);
  const auto log = pool.log();
  CHECK(log[1].diff == EditSet{{"y", 5}});
  CHECK(log[1].summary.find("y:5") != std::string::npos);
}

TEST_CASE("concurrent inserts serialize to one version per call") {
  ArtifactPool pool;
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&pool, t] {
      for (int i = 0; i < 250; ++i) {
        pool.insert_confirmed(art("t" + std::to_string(t) + "_" + std::to_string(i)), 0.001 * i);
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(pool.version() == 1000);
  const auto log = pool.log();
  for (std::size_t i = 0; i < log.size(); ++i) CHECK(log[i].version == i + 1);
}

TEST_CASE("pool update json roundtrip") {
  PoolUpdate u{7, UpdateOp::confirm, "c3", "confirm c3", {{"f01", 4}}, 0.75};
  const PoolUpdate back = pool_update_from_json(to_json(u));
  CHECK(back.version == 7);
  CHECK(back.op == UpdateOp::confirm);
  CHECK(back.diff == u.diff);
  CHECK(back.score == 0.75);
}

TEST_CASE("genome codec") {
  const Genome g{{"b", -2}, {"a", 3}};
  CHECK(encode_genome(g) == R"({"a":3,"b":-2})");
  CHECK(decode_genome(encode_genome(g)) == g);
  CHECK_THROWS_AS(decode_genome("[1,2]"), FormatError);
  CHECK_THROWS_AS(decode_genome(R"({"a":"x"})"), FormatError);
  CHECK(apply_edits(g, {{"a", 9}, {"c", 1}}) == Genome{{"a", 9}, {"b", -2}, {"c", 1}});
  CHECK(diff_genomes(g, {{"a", 3}, {"b", 0}}) == EditSet{{"b", 0}});
}
