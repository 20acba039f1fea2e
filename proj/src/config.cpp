#include "evoflux/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <set>
#include <sstream>
#include <variant>

#include "evoflux/errors.hpp"

namespace evoflux {

std::string to_string(RunMode m) { return m == RunMode::sync ? "sync" : "async"; }

RunMode run_mode_from_string(const std::string& s) {
  if (s == "sync") return RunMode::sync;
  if (s == "async") return RunMode::async;
  throw ConfigError("invalid mode '" + s + "' (expected sync | async)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

/// Typed, consumption-tracking view over one section.
class Section {
 public:
  Section(std::string name, const std::map<std::string, std::string>* values)
      : name_(std::move(name)), values_(values) {}

  bool has(const std::string& key) const { return values_ && values_->count(key); }

  std::optional<std::string> raw(const std::string& key) {
    if (!has(key)) return std::nullopt;
    used_.insert(key);
    return values_->at(key);
  }

  void get(const std::string& key, std::string& out) {
    if (auto v = raw(key)) out = *v;
  }
  void get(const std::string& key, bool& out) {
    auto v = raw(key);
    if (!v) return;
    if (*v == "true") {
      out = true;
    } else if (*v == "false") {
      out = false;
    } else {
      throw bad(key, *v, "true or false");
    }
  }
  void get(const std::string& key, double& out) {
    auto v = raw(key);
    if (!v) return;
    char* end = nullptr;
    errno = 0;
    const double d = std::strtod(v->c_str(), &end);
    if (v->empty() || *end != '\0' || errno != 0) throw bad(key, *v, "a number");
    out = d;
  }
  void get(const std::string& key, int& out) {
    std::int64_t wide = out;
    get_integer(key, wide);
    if (wide < std::numeric_limits<int>::min() || wide > std::numeric_limits<int>::max()) {
      throw bad(key, std::to_string(wide), "an integer in int range");
    }
    out = static_cast<int>(wide);
  }
  void get(const std::string& key, std::uint64_t& out) {
    std::int64_t wide = static_cast<std::int64_t>(out);
    get_integer(key, wide);
    if (wide < 0) throw bad(key, std::to_string(wide), "a non-negative integer");
    out = static_cast<std::uint64_t>(wide);
  }

  void finish() const {
    if (!values_) return;
    for (const auto& [key, value] : *values_) {
      if (!used_.count(key)) throw ConfigError("unknown key '" + key + "' in [" + name_ + "]");
    }
  }

 private:
  void get_integer(const std::string& key, std::int64_t& out) {
    auto v = raw(key);
    if (!v) return;
    char* end = nullptr;
    errno = 0;
    const long long n = std::strtoll(v->c_str(), &end, 10);
    if (v->empty() || *end != '\0' || errno != 0) throw bad(key, *v, "an integer");
    out = n;
  }

  ConfigError bad(const std::string& key, const std::string& value, const char* expected) const {
    return ConfigError("[" + name_ + "] " + key + " = '" + value + "' is not " + expected);
  }

  std::string name_;
  const std::map<std::string, std::string>* values_;
  std::set<std::string> used_;
};

const char* kStageNames[] = {"generate", "propose", "evaluate", "reflect"};

StageSpec default_stage(const std::string& name) {
  StageSpec s;
  s.name = name;
  s.handler_id = name;
  return s;
}

void read_stage(Section& sec, StageSpec& s) {
  sec.get("k_init", s.k_init);
  sec.get("k_min", s.k_min);
  sec.get("k_max", s.k_max);
  sec.get("alpha_spec", s.alpha_spec);
  sec.get("fan_out", s.fan_out);
  std::uint64_t cap = s.capacity.value_or(0);
  sec.get("capacity", cap);
  s.capacity = cap > 0 ? std::optional<std::size_t>(cap) : std::nullopt;
  sec.get("speculative_insert", s.speculative_insert);
}

nlohmann::json stage_json(const StageSpec& s) {
  return {{"k_init", s.k_init},
          {"k_min", s.k_min},
          {"k_max", s.k_max},
          {"alpha_spec", s.alpha_spec},
          {"fan_out", s.fan_out},
          {"capacity", s.capacity ? nlohmann::json(*s.capacity) : nlohmann::json(nullptr)},
          {"speculative_insert", s.speculative_insert}};
}

/// Topology with the reflect stage present exactly when the policy needs it.
PipelineTopology resolved_topology(const ExperimentConfig& c) {
  PipelineTopology t = c.topology;
  const bool reflective = t.policy.variant == PolicyVariant::reflective;
  std::erase_if(t.stages, [&](const StageSpec& s) { return s.name == "reflect" && !reflective; });
  if (reflective && !t.find("reflect")) {
    const auto it = std::find_if(c.topology.stages.begin(), c.topology.stages.end(),
                                 [](const StageSpec& s) { return s.name == "reflect"; });
    t.stages.push_back(it != c.topology.stages.end() ? *it : default_stage("reflect"));
  }
  return t;
}

}  // namespace

ConfigSections parse_config_text(const std::string& text) {
  ConfigSections out;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) throw ConfigError(where + "malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      out[section];
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of any section");
    const std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    } else if (!value.empty() && value.front() == '"') {
      throw ConfigError(where + "unterminated string");
    }
    if (!out[section].emplace(key, value).second) {
      throw ConfigError(where + "duplicate key '" + key + "' in [" + section + "]");
    }
  }
  return out;
}

ExperimentConfig w1_config(RunMode mode, std::uint64_t seed) {
  ExperimentConfig c;
  c.mode = mode;
  c.seed = seed;
  c.budget = Budget{1800.0, std::nullopt};
  c.task.n_features = 16;
  c.task.n_val_samples = 20;
  c.task.mb = 3;
  c.sim.capacity = 8;
  c.sim.token_rate = 50.0;
  c.sim.length_dist = long_tail_preset();
  c.topology.policy.variant = PolicyVariant::full;
  StageSpec gen = default_stage("generate");
  gen.k_init = 2;
  gen.k_max = 4;
  StageSpec prop = default_stage("propose");
  prop.k_init = 2;
  prop.k_max = 4;
  StageSpec eval = default_stage("evaluate");
  eval.k_init = 3;
  eval.k_max = 6;
  eval.capacity = 2;
  c.topology.stages = {gen, prop, eval};
  return c;
}

ExperimentConfig config_from_text(const std::string& text) {
  const ConfigSections sections = parse_config_text(text);
  static const std::set<std::string> known = {"run",           "policy",         "pipeline",         "backend",
                                              "task",          "output",         "stage.generate",   "stage.propose",
                                              "stage.evaluate", "stage.reflect"};
  for (const auto& [name, values] : sections) {
    if (!known.count(name)) throw ConfigError("unknown section [" + name + "]");
  }
  auto section = [&](const std::string& name) {
    auto it = sections.find(name);
    return Section(name, it == sections.end() ? nullptr : &it->second);
  };

  ExperimentConfig c;
  {
    Section s = section("run");
    std::string mode = to_string(c.mode);
    s.get("mode", mode);
    c.mode = run_mode_from_string(mode);
    s.get("seed", c.seed);
    s.get("budget_s", c.budget.time_s);
    std::uint64_t max_updates = 0;
    s.get("max_pool_updates", max_updates);
    if (s.has("max_pool_updates")) c.budget.max_pool_updates = max_updates;
    s.finish();
  }
  {
    Section s = section("policy");
    std::string variant = "full";
    s.get("variant", variant);
    c.topology.policy.variant = policy_variant_from_string(variant);
    s.get("delta_max", c.topology.policy.delta_max);
    s.get("reflector", c.topology.policy.reflector_id);
    s.finish();
  }
  {
    Section s = section("pipeline");
    auto& o = c.topology.options;
    s.get("barrier", o.barrier);
    s.get("adaptive", o.adaptive);
    s.get("control_period_s", o.control_period_s);
    s.get("rate_window_s", o.rate_window_s);
    s.get("reorder_validation", o.reorder_validation);
    s.get("demotion_streak", o.demotion_streak);
    s.get("max_reflections", o.max_reflections);
    s.get("speculative_selectable", c.speculative_selectable);
    s.finish();
  }
  {
    Section s = section("backend");
    std::string kind = "sim";
    s.get("kind", kind);
    if (kind == "sim") {
      c.backend = BackendKind::sim;
    } else if (kind == "http") {
      c.backend = BackendKind::http;
    } else {
      throw ConfigError("invalid backend kind '" + kind + "' (expected sim | http)");
    }
    s.get("capacity", c.sim.capacity);
    s.get("token_rate", c.sim.token_rate);
    s.get("overhead_s", c.sim.overhead_s);
    std::string dist = "long_tail";
    s.get("length_dist", dist);
    if (dist == "long_tail") {
      c.sim.length_dist = long_tail_preset();
    } else if (dist == "lognormal") {
      LognormalLengths d{0.0, 0.0};
      s.get("mu", d.mu);
      s.get("sigma", d.sigma);
      c.sim.length_dist = d;
    } else if (dist == "pareto") {
      ParetoLengths d{0.0, 0.0};
      s.get("scale", d.scale);
      s.get("shape", d.shape);
      c.sim.length_dist = d;
    } else if (dist == "fixed") {
      FixedLengths d{100};
      s.get("n", d.n);
      c.sim.length_dist = d;
    } else {
      throw ConfigError("invalid length_dist '" + dist + "' (expected long_tail | lognormal | pareto | fixed)");
    }
    s.get("base_url", c.http.base_url);
    s.get("model", c.http.model);
    s.get("timeout_s", c.http.timeout_s);
    s.get("max_connections", c.http.max_connections);
    s.get("temperature", c.http.temperature);
    s.finish();
  }
  {
    Section s = section("task");
    s.get("n_features", c.task.n_features);
    s.get("n_train_samples", c.task.n_train_samples);
    s.get("n_val_samples", c.task.n_val_samples);
    s.get("mb", c.task.mb);
    s.get("mutation_rate", c.task.mutation_rate);
    s.get("value_range", c.task.value_range);
    s.get("features_per_sample", c.task.features_per_sample);
    s.get("pass_fraction", c.task.pass_fraction);
    s.get("skewed_weights", c.task.skewed_weights);
    s.get("prompt_tokens", c.task.prompt_tokens);
    s.get("max_output_tokens", c.task.max_output_tokens);
    s.get("fixture", c.task_fixture);
    s.finish();
  }
  for (const char* name : kStageNames) {
    const std::string sec_name = std::string("stage.") + name;
    StageSpec spec = default_stage(name);
    const bool present = sections.count(sec_name) != 0;
    Section s = section(sec_name);
    read_stage(s, spec);
    s.finish();
    if (present || std::string(name) != "reflect") c.topology.stages.push_back(spec);
  }
  {
    Section s = section("output");
    s.get("dir", c.output.dir);
    s.get("report", c.output.report);
    s.get("trace", c.output.trace);
    s.get("score_csv", c.output.score_csv);
    s.get("concurrency_csv", c.output.concurrency_csv);
    s.get("checkpoint", c.output.checkpoint);
    s.finish();
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return config_from_text(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void ExperimentConfig::validate() const {
  if (!(budget.time_s >= 0.0)) throw ConfigError("budget_s must be >= 0");
  if (task_fixture.empty()) task.validate();
  if (backend == BackendKind::sim) {
    sim.validate();
  } else {
    http.validate();
  }
  resolved_topology(*this).validate(ReflectorRegistry{});
}

nlohmann::json ExperimentConfig::echo() const {
  const PipelineTopology t = resolved_topology(*this);
  nlohmann::json stages = nlohmann::json::object();
  for (const auto& s : t.stages) stages[s.name] = stage_json(s);
  nlohmann::json backend_json;
  if (backend == BackendKind::sim) {
    nlohmann::json dist = std::visit(
        [](const auto& d) -> nlohmann::json {
          using D = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<D, LognormalLengths>) {
            return {{"kind", "lognormal"}, {"mu", d.mu}, {"sigma", d.sigma}};
          } else if constexpr (std::is_same_v<D, ParetoLengths>) {
            return {{"kind", "pareto"}, {"scale", d.scale}, {"shape", d.shape}};
          } else {
            return {{"kind", "fixed"}, {"n", d.n}};
          }
        },
        sim.length_dist);
    backend_json = {{"kind", "sim"},
                    {"capacity", sim.capacity},
                    {"token_rate", sim.token_rate},
                    {"overhead_s", sim.overhead_s},
                    {"length_dist", dist}};
  } else {
    backend_json = {{"kind", "http"},
                    {"base_url", http.base_url},
                    {"model", http.model},
                    {"timeout_s", http.timeout_s},
                    {"max_connections", http.max_connections},
                    {"temperature", http.temperature}};
  }
  const auto& o = t.options;
  return {{"mode", to_string(mode)},
          {"seed", seed},
          {"budget_s", budget.time_s},
          {"max_pool_updates", budget.max_pool_updates ? nlohmann::json(*budget.max_pool_updates) : nlohmann::json(nullptr)},
          {"policy",
           {{"variant", to_string(t.policy.variant)},
            {"delta_max", t.policy.delta_max},
            {"reflector", t.policy.reflector_id}}},
          {"pipeline",
           {{"barrier", o.barrier},
            {"adaptive", o.adaptive},
            {"control_period_s", o.control_period_s},
            {"rate_window_s", o.rate_window_s},
            {"reorder_validation", o.reorder_validation},
            {"demotion_streak", o.demotion_streak},
            {"max_reflections", o.max_reflections},
            {"speculative_selectable", speculative_selectable}}},
          {"stages", stages},
          {"backend", backend_json},
          {"task",
           {{"n_features", task.n_features},
            {"n_train_samples", task.n_train_samples},
            {"n_val_samples", task.n_val_samples},
            {"mb", task.mb},
            {"mutation_rate", task.mutation_rate},
            {"value_range", task.value_range},
            {"features_per_sample", task.features_per_sample},
            {"pass_fraction", task.pass_fraction},
            {"skewed_weights", task.skewed_weights},
            {"prompt_tokens", task.prompt_tokens},
            {"max_output_tokens", task.max_output_tokens},
            {"fixture", task_fixture}}}};
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  TaskConfig tc = config.task;
  tc.rng_seed = config.seed;
  const SyntheticTask task = config.task_fixture.empty() ? SyntheticTask(tc) : SyntheticTask::from_fixture_file(config.task_fixture);

  std::unique_ptr<Executor> executor;
  if (config.backend == BackendKind::sim) {
    executor = std::make_unique<VirtualEventLoop>();
  } else {
    executor = std::make_unique<RealtimeEventLoop>();
  }
  std::unique_ptr<Backend> backend;
  if (config.backend == BackendKind::sim) {
    SimBackendConfig sc = config.sim;
    sc.rng_seed = config.seed;
    backend = std::make_unique<SimBackend>(*executor, sc);
  } else {
    backend = std::make_unique<HttpBackend>(*executor, config.http);
  }

  ArtifactPool pool(config.speculative_selectable);
  seed_pool(pool, task);
  Trace trace;
  ExperimentResult result;
  if (config.mode == RunMode::sync) {
    run_sync_reference(task, pool, *backend, *executor, trace, config.budget);
  } else {
    Pipeline pipeline(resolved_topology(config), task, pool, *backend, *executor, trace);
    pipeline.run(config.budget);
    result.counters = pipeline.counters();
  }
  result.trace = trace.events();
  result.report = compute_report(result.trace, config.budget.time_s);
  result.report.seed = config.seed;
  result.report.config_echo = config.echo();
  result.report.generated_at = utc_timestamp();
  result.checkpoint = pool.to_checkpoint();
  return result;
}

void write_outputs(const ExperimentConfig& config, const ExperimentResult& result) {
  namespace fs = std::filesystem;
  const fs::path dir(config.output.dir);
  fs::create_directories(dir);
  write_report(result.report, (dir / config.output.report).string());
  {
    std::ofstream out(dir / config.output.trace);
    if (!out) throw Error("cannot write trace " + (dir / config.output.trace).string());
    for (const auto& e : result.trace) out << to_json(e).dump() << '\n';
  }
  {
    std::ofstream out(dir / config.output.score_csv);
    write_score_csv(result.report, out);
  }
  {
    std::ofstream out(dir / config.output.concurrency_csv);
    write_concurrency_csv(result.report, out);
  }
  if (!config.output.checkpoint.empty()) {
    std::ofstream out(dir / config.output.checkpoint);
    out << result.checkpoint.dump(2) << '\n';
  }
}

}  // namespace evoflux
