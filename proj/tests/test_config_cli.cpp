#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "evoflux/config.hpp"
#include "evoflux/errors.hpp"

using namespace evoflux;
namespace fs = std::filesystem;

namespace {

const std::string kW1 = EVOFLUX_CONFIG_DIR "/w1.toml";

int cli(const std::string& args) {
  const std::string cmd = std::string(EVOFLUX_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("evoflux_cli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("config text parsing") {
  const auto s = parse_config_text("# top\n[run]\nmode = \"sync\"  # trailing\nseed=7\n\n[task]\nmb = 2\n");
  CHECK(s.at("run").at("mode") == "sync");
  CHECK(s.at("run").at("seed") == "7");
  CHECK(s.at("task").at("mb") == "2");
  CHECK_THROWS_AS(parse_config_text("seed = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[run\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[run]\nseed\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[run]\nseed = 1\nseed = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[run]\nmode = \"sync\n"), ConfigError);
}

TEST_CASE("w1 file matches the built-in preset") {
  const auto file = load_config(kW1);
  const auto preset = w1_config(RunMode::async, 42);
  auto a = file.echo();
  auto b = preset.echo();
  // delta_max only matters under the guarded policy
  a["policy"].erase("delta_max");
  b["policy"].erase("delta_max");
  CHECK(a == b);
}

TEST_CASE("schema errors") {
  CHECK_THROWS_AS(config_from_text("[nope]\n"), ConfigError);
  CHECK_THROWS_AS(config_from_text("[run]\ncolour = 1\n"), ConfigError);
  CHECK_THROWS_AS(config_from_text("[run]\nseed = -3\n"), ConfigError);
  CHECK_THROWS_AS(config_from_text("[run]\nmode = \"fast\"\n"), ConfigError);
  CHECK_THROWS_AS(config_from_text("[policy]\nvariant = \"lax\"\n"), ConfigError);
  CHECK_THROWS_AS(config_from_text("[policy]\nvariant = \"reflective\"\nreflector = \"llm\"\n"), ConfigError);
  CHECK_THROWS_AS(config_from_text("[backend]\nlength_dist = \"zipf\"\n"), ConfigError);
  CHECK_THROWS_AS(config_from_text("[backend]\ncapacity = 0\n"), ConfigError);
  CHECK_THROWS_AS(config_from_text("[stage.evaluate]\nk_init = 5\nk_max = 2\n"), ConfigError);
  CHECK_THROWS_AS(config_from_text("[stage.generate]\nalpha_spec = 0\n"), ConfigError);
  CHECK_THROWS_AS(config_from_text("[task]\nmb = 99\n"), ConfigError);
  CHECK_THROWS_AS(config_from_text("[pipeline]\nadaptive = yes\n"), ConfigError);
}

TEST_CASE("reflect stage follows the policy") {
  const auto plain = config_from_text("[policy]\nvariant = \"reflective\"\n");
  CHECK(plain.echo()["stages"].contains("reflect"));
  const auto tuned = config_from_text("[policy]\nvariant = \"guarded\"\n[stage.reflect]\nk_max = 2\n");
  CHECK_FALSE(tuned.echo()["stages"].contains("reflect"));
}

TEST_CASE("small experiment end to end") {
  auto c = w1_config(RunMode::async, 3);
  c.budget.time_s = 120;
  c.output.dir = scratch("e2e").string();
  c.output.checkpoint = "pool.json";
  const auto r = run_experiment(c);
  REQUIRE(r.counters);
  CHECK(r.report.seed == 3);
  CHECK(r.report.config_echo["mode"] == "async");
  write_outputs(c, r);
  for (const char* f : {"report.json", "trace.jsonl", "score_curve.csv", "concurrency_curve.csv", "pool.json"}) {
    CHECK(fs::exists(fs::path(c.output.dir) / f));
  }
  CHECK(to_json(read_report((fs::path(c.output.dir) / "report.json").string())) == to_json(r.report));
  fs::remove_all(c.output.dir);
}

TEST_CASE("cli run, compare and replay") {
  const auto dir = scratch("run");
  CHECK(cli("run --config " + kW1 + " --mode sync --seed 42 --budget 120 --out " + (dir / "sync").string()) == 0);
  CHECK(fs::exists(dir / "sync" / "report.json"));
  CHECK(cli("run --config " + kW1 + " --policy guarded --budget 120 --out " + (dir / "async").string()) == 0);
  CHECK(cli("compare --a " + (dir / "sync" / "report.json").string() + " --b " +
            (dir / "async" / "report.json").string()) == 0);
  CHECK(cli("replay --trace " + (dir / "async" / "trace.jsonl").string() + " --budget 120 --out " +
            (dir / "replayed.json").string()) == 0);
  const auto original = read_report((dir / "async" / "report.json").string());
  const auto replayed = read_report((dir / "replayed.json").string());
  CHECK(replayed.proposals == original.proposals);
  CHECK(replayed.total_output_tokens == original.total_output_tokens);
  fs::remove_all(dir);
}

TEST_CASE("cli usage errors exit with 2") {
  CHECK(cli("run --config " + kW1 + " --policy sometimes --budget 10") == 2);
  CHECK(cli("run --config " + kW1 + " --mode turbo --budget 10") == 2);
  CHECK(cli("run --config /does/not/exist.toml") == 2);
  CHECK(cli("run") == 2);
  CHECK(cli("bogus") == 2);
}

TEST_CASE("cli reports other failures as nonzero") {
  const auto dir = scratch("bad");
  fs::create_directories(dir);
  std::ofstream(dir / "trace.jsonl") << "{not json}\n";
  CHECK(cli("replay --trace " + (dir / "trace.jsonl").string() + " --budget 10") == 1);
  CHECK(cli("compare --a " + (dir / "missing.json").string() + " --b " + (dir / "missing.json").string()) != 0);
  fs::remove_all(dir);
}
