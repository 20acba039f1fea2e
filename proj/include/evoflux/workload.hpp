#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "evoflux/artifact_pool.hpp"
#include "evoflux/backend.hpp"
#include "evoflux/edits.hpp"
#include "evoflux/queue_item.hpp"

namespace evoflux {

struct TaskConfig {
  int n_features = 16;
  int n_train_samples = 30;
  int n_val_samples = 20;
  int mb = 3;
  double mutation_rate = 0.5;
  std::uint64_t rng_seed = 42;
  int value_range = 8;
  /// Features each sample checks.
  int features_per_sample = 4;
  /// Fraction of a sample's features that must match for it to pass.
  double pass_fraction = 1.0;
  bool skewed_weights = false;
  int prompt_tokens = 256;
  int max_output_tokens = 4096;

  void validate() const;
};

struct TaskSample {
  std::string sample_id;
  std::map<std::string, int> target;
  double weight = 0.0;
};

/// GEPA-shaped synthetic task. Scoring never touches the backend; the backend
/// only contributes latency and token counts.
class SyntheticTask {
 public:
  explicit SyntheticTask(TaskConfig config);

  /// Task from a JSON fixture: {"features": [...], "initial": {...},
  /// "train": [{"sample_id", "target", "weight"}], "val": [...]} plus optional
  /// "mb", "mutation_rate", "pass_fraction", "rng_seed".
  static SyntheticTask from_fixture(const nlohmann::json& fixture);
  static SyntheticTask from_fixture_file(const std::string& path);

  const TaskConfig& config() const { return config_; }
  const std::vector<std::string>& features() const { return features_; }
  const std::vector<TaskSample>& train() const { return train_; }
  const std::vector<TaskSample>& val() const { return val_; }
  const Genome& initial_genome() const { return initial_; }
  const TaskSample& val_sample(const std::string& id) const;

  /// Round-robin minibatch of `mb` training samples for an evolution step.
  std::vector<const TaskSample*> minibatch(std::uint64_t step) const;

  Trajectory run_sample(const Genome& genome, const TaskSample& sample) const;
  /// Correction implied by the first failing check of each feature.
  EditSet corrections(const std::vector<Trajectory>& trajectories) const;

  /// Candidate from parent + corrections (each kept with probability
  /// mutation_rate) + one random perturbation; RNG keyed by candidate id.
  CandidatePayload propose(const FeedbackPayload& feedback, const std::string& candidate_id,
                           PoolVersion at_version) const;

  bool passes(const Genome& genome, const TaskSample& sample) const;
  double score(const Genome& genome) const;
  double weighted_score(const std::vector<std::pair<std::string, bool>>& outcomes) const;

  /// The seeded initial artifact ("seed").
  Artifact initial_artifact() const;

  BackendRequest generate_request(std::uint64_t step, const TaskSample& sample, std::uint64_t item_id) const;
  BackendRequest propose_request(const std::string& candidate_id, std::uint64_t item_id) const;
  BackendRequest evaluate_request(const std::string& candidate_id, const TaskSample& sample,
                                  std::uint64_t item_id) const;

  static std::string candidate_id(std::uint64_t step, bool supplementary);

 private:
  SyntheticTask() = default;

  TaskConfig config_;
  std::vector<std::string> features_;
  Genome initial_;
  std::vector<TaskSample> train_;
  std::vector<TaskSample> val_;
};

/// Loads the task into an empty pool: inserts the initial artifact, scored
/// without backend cost.
void seed_pool(ArtifactPool& pool, const SyntheticTask& task);

/// Generate stage for one step: one backend request per minibatch sample,
/// then `done` with the feedback once all are back.
void generate_handler(const SyntheticTask& task, const SelectPayload& artifact, std::uint64_t step,
                      std::uint64_t item_id, Backend& backend, std::function<void(FeedbackPayload)> done,
                      std::function<void(BackendOutcome)> failed = {});

/// Propose stage: one backend request, then the candidate.
void propose_handler(const SyntheticTask& task, const FeedbackPayload& feedback,
                     const std::string& candidate_id, PoolVersion at_version, std::uint64_t item_id,
                     Backend& backend,
                     std::function<void(CandidatePayload)> done,
                     std::function<void(BackendOutcome)> failed = {});

struct EvaluationResult {
  std::vector<std::pair<std::string, bool>> outcomes;  // in validation order
  double score = 0.0;
};

/// Evaluate stage: one request per validation sample in `order`.
void evaluate_handler(const SyntheticTask& task, const CandidatePayload& candidate,
                      const std::vector<std::string>& order, std::uint64_t item_id, Backend& backend,
                      std::function<void(EvaluationResult)> done,
                      std::function<void(BackendOutcome)> failed = {});

}  // namespace evoflux
