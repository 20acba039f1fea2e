#include "evoflux/workload.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>

#include "evoflux/errors.hpp"

namespace evoflux {

namespace {

std::uint64_t mix_key(std::uint64_t seed, const std::string& key) {
  std::uint64_t h = 14695981039346656037ull ^ seed;
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ull;
  }
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

std::string feature_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "f%02d", i);
  return buf;
}

std::vector<TaskSample> make_samples(const std::string& prefix, int n, const Genome& truth,
                                     const std::vector<std::string>& features, int per_sample,
                                     bool skewed, std::mt19937_64& rng) {
  std::vector<TaskSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> pick = features;
    std::shuffle(pick.begin(), pick.end(), rng);
    pick.resize(static_cast<std::size_t>(per_sample));
    TaskSample s;
    s.sample_id = prefix + std::to_string(i);
    for (const auto& f : pick) s.target.emplace(f, truth.at(f));
    s.weight = skewed ? static_cast<double>(i + 1) : 1.0;
    out.push_back(std::move(s));
  }
  const double total = std::accumulate(out.begin(), out.end(), 0.0,
                                       [](double acc, const TaskSample& s) { return acc + s.weight; });
  for (auto& s : out) s.weight /= total;
  return out;
}

TaskSample sample_from_json(const nlohmann::json& j) {
  TaskSample s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.target = genome_from_json(j.at("target"));
  s.weight = j.value("weight", 0.0);
  return s;
}

}  // namespace

void TaskConfig::validate() const {
  if (n_features < 1) throw ConfigError("task n_features must be >= 1");
  if (n_train_samples < 1) throw ConfigError("task n_train_samples must be >= 1");
  if (n_val_samples < 1) throw ConfigError("task n_val_samples must be >= 1");
  if (mb < 1 || mb > n_train_samples) throw ConfigError("task mb must lie in [1, n_train_samples]");
  if (!(mutation_rate >= 0.0 && mutation_rate <= 1.0)) throw ConfigError("task mutation_rate must lie in [0,1]");
  if (value_range < 2) throw ConfigError("task value_range must be >= 2");
  if (features_per_sample < 1 || features_per_sample > n_features) {
    throw ConfigError("task features_per_sample must lie in [1, n_features]");
  }
  if (!(pass_fraction > 0.0 && pass_fraction <= 1.0)) throw ConfigError("task pass_fraction must lie in (0,1]");
  if (prompt_tokens < 0) throw ConfigError("task prompt_tokens must be >= 0");
  if (max_output_tokens < 1) throw ConfigError("task max_output_tokens must be >= 1");
}

SyntheticTask::SyntheticTask(TaskConfig config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.rng_seed);
  std::uniform_int_distribution<int> value(0, config_.value_range - 1);
  Genome truth;
  for (int i = 0; i < config_.n_features; ++i) {
    features_.push_back(feature_name(i));
    truth[features_.back()] = value(rng);
  }
  for (const auto& f : features_) initial_[f] = value(rng);
  train_ = make_samples("t", config_.n_train_samples, truth, features_, config_.features_per_sample,
                        false, rng);
  val_ = make_samples("v", config_.n_val_samples, truth, features_, config_.features_per_sample,
                      config_.skewed_weights, rng);
}

SyntheticTask SyntheticTask::from_fixture(const nlohmann::json& fixture) {
  SyntheticTask task;
  try {
    for (const auto& f : fixture.at("features")) task.features_.push_back(f.get<std::string>());
    task.initial_ = genome_from_json(fixture.at("initial"));
    for (const auto& s : fixture.at("train")) task.train_.push_back(sample_from_json(s));
    for (const auto& s : fixture.at("val")) task.val_.push_back(sample_from_json(s));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed task fixture: ") + e.what());
  }
  auto& c = task.config_;
  c.n_features = static_cast<int>(task.features_.size());
  c.n_train_samples = static_cast<int>(task.train_.size());
  c.n_val_samples = static_cast<int>(task.val_.size());
  c.mb = fixture.value("mb", std::min(3, c.n_train_samples));
  c.mutation_rate = fixture.value("mutation_rate", 0.5);
  c.pass_fraction = fixture.value("pass_fraction", 1.0);
  c.rng_seed = fixture.value("rng_seed", std::uint64_t{42});
  c.value_range = fixture.value("value_range", 8);
  c.features_per_sample = 1;
  for (const auto& s : task.val_) c.features_per_sample = std::max<int>(c.features_per_sample, static_cast<int>(s.target.size()));
  c.validate();
  auto normalize = [](std::vector<TaskSample>& samples) {
    double total = 0.0;
    for (const auto& s : samples) total += s.weight;
    if (total <= 0.0) {
      for (auto& s : samples) s.weight = 1.0 / static_cast<double>(samples.size());
    } else {
      for (auto& s : samples) s.weight /= total;
    }
  };
  normalize(task.train_);
  normalize(task.val_);
  return task;
}

SyntheticTask SyntheticTask::from_fixture_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open task fixture " + path);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("task fixture " + path + " is not JSON");
  return from_fixture(j);
}

const TaskSample& SyntheticTask::val_sample(const std::string& id) const {
  for (const auto& s : val_) {
    if (s.sample_id == id) return s;
  }
  throw UnknownSample("unknown validation sample '" + id + "'");
}

std::vector<const TaskSample*> SyntheticTask::minibatch(std::uint64_t step) const {
  std::vector<const TaskSample*> out;
  const std::uint64_t n = train_.size();
  for (int j = 0; j < config_.mb; ++j) {
    out.push_back(&train_[(step * static_cast<std::uint64_t>(config_.mb) + static_cast<std::uint64_t>(j)) % n]);
  }
  return out;
}

Trajectory SyntheticTask::run_sample(const Genome& genome, const TaskSample& sample) const {
  Trajectory t;
  t.sample_id = sample.sample_id;
  for (const auto& [feature, target] : sample.target) {
    auto it = genome.find(feature);
    const int value = it == genome.end() ? -1 : it->second;
    t.checks.push_back({feature, value, target, value == target});
  }
  return t;
}

EditSet SyntheticTask::corrections(const std::vector<Trajectory>& trajectories) const {
  EditSet out;
  for (const auto& t : trajectories) {
    for (const auto& c : t.checks) {
      if (!c.match) out.emplace(c.feature, c.target);
    }
  }
  return out;
}

CandidatePayload SyntheticTask::propose(const FeedbackPayload& feedback, const std::string& candidate_id,
                                        PoolVersion at_version) const {
  std::mt19937_64 rng(mix_key(config_.rng_seed, candidate_id));
  std::bernoulli_distribution keep(config_.mutation_rate);
  Genome genome = feedback.parent;
  for (const auto& [feature, target] : feedback.corrections) {
    if (keep(rng)) genome[feature] = target;
  }
  std::uniform_int_distribution<std::size_t> which(0, features_.size() - 1);
  std::uniform_int_distribution<int> value(0, config_.value_range - 1);
  const std::string& f = features_[which(rng)];
  genome[f] = value(rng);

  CandidatePayload c;
  c.artifact_id = candidate_id;
  c.parent_id = feedback.parent_id;
  c.edits = diff_genomes(feedback.parent, genome);
  c.genome = std::move(genome);
  c.created_at_version = at_version;
  return c;
}

bool SyntheticTask::passes(const Genome& genome, const TaskSample& sample) const {
  if (sample.target.empty()) return true;
  std::size_t matched = 0;
  for (const auto& [feature, target] : sample.target) {
    auto it = genome.find(feature);
    if (it != genome.end() && it->second == target) ++matched;
  }
  const double need = config_.pass_fraction * static_cast<double>(sample.target.size());
  return static_cast<double>(matched) + 1e-9 >= need;
}

double SyntheticTask::score(const Genome& genome) const {
  double s = 0.0;
  for (const auto& sample : val_) {
    if (passes(genome, sample)) s += sample.weight;
  }
  return std::clamp(s, 0.0, 1.0);
}

double SyntheticTask::weighted_score(const std::vector<std::pair<std::string, bool>>& outcomes) const {
  double s = 0.0;
  for (const auto& [id, passed] : outcomes) {
    if (passed) s += val_sample(id).weight;
  }
  return std::clamp(s, 0.0, 1.0);
}

Artifact SyntheticTask::initial_artifact() const {
  Artifact a;
  a.id = "seed";
  a.payload = encode_genome(initial_);
  a.kind = ArtifactKind::synthetic;
  a.created_at_version = 0;
  return a;
}

BackendRequest SyntheticTask::generate_request(std::uint64_t step, const TaskSample& sample,
                                               std::uint64_t item_id) const {
  BackendRequest r;
  r.request_id = std::to_string(step) + "/generate/" + sample.sample_id;
  r.stage = "generate";
  r.item_id = item_id;
  r.prompt_tokens = config_.prompt_tokens;
  r.max_output_tokens = config_.max_output_tokens;
  r.seed_material = r.request_id;
  r.prompt = "Run the current artifact on sample " + sample.sample_id + " and report the outcome.";
  return r;
}

BackendRequest SyntheticTask::propose_request(const std::string& candidate_id, std::uint64_t item_id) const {
  BackendRequest r;
  r.request_id = candidate_id + "/propose";
  r.stage = "propose";
  r.item_id = item_id;
  r.prompt_tokens = config_.prompt_tokens * 2;
  r.max_output_tokens = config_.max_output_tokens;
  r.seed_material = r.request_id;
  r.prompt = "Reflect on the collected trajectories and propose an improved artifact.";
  return r;
}

BackendRequest SyntheticTask::evaluate_request(const std::string& candidate_id, const TaskSample& sample,
                                               std::uint64_t item_id) const {
  BackendRequest r;
  r.request_id = candidate_id + "/evaluate/" + sample.sample_id;
  r.stage = "evaluate";
  r.item_id = item_id;
  r.prompt_tokens = config_.prompt_tokens;
  r.max_output_tokens = config_.max_output_tokens;
  r.seed_material = r.request_id;
  r.prompt = "Answer validation sample " + sample.sample_id + " with the candidate artifact.";
  return r;
}

std::string SyntheticTask::candidate_id(std::uint64_t step, bool supplementary) {
  return "c" + std::to_string(step) + (supplementary ? ".1" : "");
}

void seed_pool(ArtifactPool& pool, const SyntheticTask& task) {
  pool.insert_confirmed(task.initial_artifact(), task.score(task.initial_genome()));
}

namespace {

/// Collects `n` backend completions, then fires `on_all` (or `on_fail` with
/// the first error once every request is back).
struct FanIn {
  std::size_t remaining;
  std::vector<std::optional<BackendResponse>> responses;
  std::optional<BackendOutcome> first_error;
};

}  // namespace

void generate_handler(const SyntheticTask& task, const SelectPayload& artifact, std::uint64_t step,
                      std::uint64_t item_id, Backend& backend, std::function<void(FeedbackPayload)> done,
                      std::function<void(BackendOutcome)> failed) {
  const auto batch = task.minibatch(step);
  auto state = std::make_shared<FanIn>(FanIn{batch.size(), std::vector<std::optional<BackendResponse>>(batch.size()), {}});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    backend.submit(task.generate_request(step, *batch[i], item_id),
                   [&task, artifact, batch, state, i, done, failed](BackendOutcome o) {
                     if (!o.ok() && !state->first_error) state->first_error = o;
                     if (o.ok()) state->responses[i] = std::move(o.response);
                     if (--state->remaining > 0) return;
                     if (state->first_error) {
                       if (failed) failed(*state->first_error);
                       return;
                     }
                     FeedbackPayload f;
                     f.parent_id = artifact.artifact_id;
                     f.parent = artifact.genome;
                     for (const TaskSample* s : batch) f.trajectories.push_back(task.run_sample(artifact.genome, *s));
                     f.corrections = task.corrections(f.trajectories);
                     done(std::move(f));
                   });
  }
}

void propose_handler(const SyntheticTask& task, const FeedbackPayload& feedback,
                     const std::string& candidate_id, PoolVersion at_version, std::uint64_t item_id,
                     Backend& backend, std::function<void(CandidatePayload)> done,
                     std::function<void(BackendOutcome)> failed) {
  backend.submit(task.propose_request(candidate_id, item_id),
                 [&task, feedback, candidate_id, at_version, done, failed](BackendOutcome o) {
                   if (!o.ok()) {
                     if (failed) failed(o);
                     return;
                   }
                   done(task.propose(feedback, candidate_id, at_version));
                 });
}

void evaluate_handler(const SyntheticTask& task, const CandidatePayload& candidate,
                      const std::vector<std::string>& order, std::uint64_t item_id, Backend& backend,
                      std::function<void(EvaluationResult)> done,
                      std::function<void(BackendOutcome)> failed) {
  auto state = std::make_shared<FanIn>(FanIn{order.size(), std::vector<std::optional<BackendResponse>>(order.size()), {}});
  for (std::size_t i = 0; i < order.size(); ++i) {
    const TaskSample& sample = task.val_sample(order[i]);
    backend.submit(task.evaluate_request(candidate.artifact_id, sample, item_id),
                   [&task, candidate, order, state, i, done, failed](BackendOutcome o) {
                     if (!o.ok() && !state->first_error) state->first_error = o;
                     if (o.ok()) state->responses[i] = std::move(o.response);
                     if (--state->remaining > 0) return;
                     if (state->first_error) {
                       if (failed) failed(*state->first_error);
                       return;
                     }
                     EvaluationResult r;
                     for (const auto& id : order) r.outcomes.emplace_back(id, task.passes(candidate.genome, task.val_sample(id)));
                     r.score = task.weighted_score(r.outcomes);
                     done(std::move(r));
                   });
  }
}

}  // namespace evoflux
